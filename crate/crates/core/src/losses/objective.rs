use alloc::format;
use alloc::vec::Vec;

use super::{
    check_alpha, dc_loss_var, mi_pairing_costs, mi_targets, phase_pairing_costs, phase_weights, pit_choose, LossBreakdown,
    MiVariant, PitCriterion, WeightScheme,
};
use crate::autodiff::{Tape, Var};
use crate::dsp::{magnitude, phase_field, ComplexSpectrogram, Matrix, PhaseField};
use crate::error::{shape_err, Result};
use crate::targets::{dominance_labels, va_weights, LabelMatrix, DEFAULT_VA_THRESHOLD_DB};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub alpha: f64,
    pub mi_variant: MiVariant,
    pub pit: PitCriterion,
    pub weights: WeightScheme,
    /// Use voice-activity weights in the deep-clustering term.
    pub dc_va: bool,
    pub va_threshold_db: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            alpha: 0.975,
            mi_variant: MiVariant::Tpsa,
            pit: PitCriterion::MaskDependent,
            weights: WeightScheme::default(),
            dc_va: true,
            va_threshold_db: DEFAULT_VA_THRESHOLD_DB,
        }
    }
}

/// Everything the objective needs from the references of one example.
#[derive(Debug, Clone)]
pub struct ItemTargets {
    pub frames: usize,
    pub bins: usize,
    pub labels: LabelMatrix,
    pub va: Option<Vec<f64>>,
    pub mix_mag: Matrix,
    pub mi_targets: Vec<Matrix>,
    pub true_phase: Vec<PhaseField>,
    /// Phase-loss weights indexed by reference.
    pub phase_weights: Vec<Matrix>,
}

impl ItemTargets {
    pub fn new(mixture: &ComplexSpectrogram, sources: &[ComplexSpectrogram], cfg: &ObjectiveConfig) -> Result<Self> {
        let labels = dominance_labels(sources)?;
        let va = if cfg.dc_va { Some(va_weights(mixture, cfg.va_threshold_db)?.values.into_vec()) } else { None };
        let mix_mag = magnitude(mixture);
        let peak = mix_mag.max();
        let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
        let mags: Vec<Matrix> = sources.iter().map(|s| magnitude(s).map(|v| v * scale)).collect();
        Ok(Self {
            frames: mixture.frames(),
            bins: mixture.bins(),
            labels,
            va,
            mi_targets: mi_targets(mixture, sources, cfg.mi_variant)?,
            true_phase: sources.iter().map(|s| phase_field(s, None)).collect(),
            phase_weights: phase_weights(&mags, &cfg.weights)?,
            mix_mag,
        })
    }

    pub fn sources(&self) -> usize {
        self.mi_targets.len()
    }
}

/// Keeps the first `rows` rows of `x` when the model ran on a zero-padded chunk.
fn valid_rows(tape: &mut Tape, x: Var, rows: usize, what: &str) -> Result<Var> {
    let have = tape.shape(x).first().copied().unwrap_or(0);
    if have == rows {
        Ok(x)
    } else if have > rows {
        tape.slice_rows(x, 0, rows)
    } else {
        Err(shape_err("objective", format!("{what} has {have} rows, targets need {rows}")))
    }
}

/// Records `alpha * dc + (1 - alpha) * (mi + pi)` for one example.
///
/// `embeddings` is `[T'*F, D]`, each mask `[T', F]` and each phase `[T'*F, 2]`,
/// with `T' >= targets.frames`; rows past the valid frames are ignored.
/// `phases = None` drops the phase term (mask-only model).
pub fn evaluate(
    tape: &mut Tape,
    embeddings: Var,
    masks: &[Var],
    phases: Option<&[Var]>,
    targets: &ItemTargets,
    cfg: &ObjectiveConfig,
) -> Result<(Var, LossBreakdown)> {
    check_alpha(cfg.alpha)?;
    let c = targets.sources();
    if masks.len() != c || phases.is_some_and(|p| p.len() != c) {
        return Err(shape_err("objective", format!("{} masks for {} references", masks.len(), c)));
    }
    let n = targets.frames * targets.bins;
    let v = valid_rows(tape, embeddings, n, "embeddings")?;
    let masks = masks.iter().map(|&m| valid_rows(tape, m, targets.frames, "mask")).collect::<Result<Vec<_>>>()?;
    let phases = match phases {
        Some(p) => Some(p.iter().map(|&x| valid_rows(tape, x, n, "phase")).collect::<Result<Vec<_>>>()?),
        None => None,
    };

    let dc = dc_loss_var(tape, v, &targets.labels, targets.va.as_deref())?;
    let mi_costs = mi_pairing_costs(tape, &masks, &targets.mix_mag, &targets.mi_targets)?;
    let pi_costs = match &phases {
        Some(p) => Some(phase_pairing_costs(tape, p, &targets.true_phase, &targets.phase_weights)?),
        None => None,
    };
    let choice = pit_choose(tape, &mi_costs, pi_costs.as_deref(), cfg.pit)?;
    let mut rest = choice.mask;
    if let Some(p) = choice.phase {
        rest = tape.add(rest, p)?;
    }
    let a = tape.scale(dc, cfg.alpha);
    let b = tape.scale(rest, 1.0 - cfg.alpha);
    let total = tape.add(a, b)?;
    let breakdown = LossBreakdown {
        dc: tape.scalar(dc),
        mi: tape.scalar(choice.mask),
        pi: choice.phase.map_or(0.0, |p| tape.scalar(p)),
        total: tape.scalar(total),
        chosen_perm: choice.perm,
    };
    Ok((total, breakdown))
}
