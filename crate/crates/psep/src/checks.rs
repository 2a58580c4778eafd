//! Named gradient checks over every objective and the full toy network.

use psep_core::autodiff::{gradcheck, GradcheckOptions, GradcheckReport, Tape, Tensor, Var};
use psep_core::dsp::{ComplexSpectrogram, Matrix, StftConfig};
use psep_core::losses::{evaluate, ItemTargets, MiVariant, ObjectiveConfig, PhaseWeighting, PitCriterion, WeightScheme};
use psep_core::model::{MaskActivation, Mode, Model, ModelConfig};
use psep_core::rng::seeded;
use rand::Rng as _;

const T: usize = 4;
const F: usize = 8;
const D: usize = 4;
const C: usize = 2;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub report: GradcheckReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Module {
    Losses,
    Model,
    All,
}

fn toy_spec(rng: &mut psep_core::rng::Rng) -> ComplexSpectrogram {
    let n = T * F;
    ComplexSpectrogram {
        re: Matrix::from_vec(T, F, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()),
        im: Matrix::from_vec(T, F, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()),
        config: StftConfig { fft_size: 2 * (F - 1), hop: 2, ..StftConfig::default() },
        sample_rate_hz: 8000,
    }
}

fn toy_item(seed: u64) -> (ComplexSpectrogram, Vec<ComplexSpectrogram>) {
    let mut rng = seeded(seed);
    let sources: Vec<_> = (0..C).map(|_| toy_spec(&mut rng)).collect();
    let mix = sources[0].add(&sources[1]).expect("same shapes");
    (mix, sources)
}

/// The objective under test with its configuration.
pub fn loss_cases() -> Vec<(&'static str, ObjectiveConfig)> {
    let base = ObjectiveConfig { alpha: 0.5, ..Default::default() };
    let w = |weighting| WeightScheme::new(weighting);
    vec![
        ("dc_classic", ObjectiveConfig { alpha: 1.0, dc_va: false, ..base }),
        ("dc_va", ObjectiveConfig { alpha: 1.0, ..base }),
        ("mi_tpsa", ObjectiveConfig { alpha: 0.0, mi_variant: MiVariant::Tpsa, ..base }),
        ("mi_msa", ObjectiveConfig { alpha: 0.0, mi_variant: MiVariant::Msa, ..base }),
        ("pi_plain", ObjectiveConfig { alpha: 0.0, weights: w(PhaseWeighting::Plain), ..base }),
        ("pit_mp", ObjectiveConfig { alpha: 0.0, pit: PitCriterion::MaskPhase, ..base }),
        ("pit_md", ObjectiveConfig { alpha: 0.0, pit: PitCriterion::MaskDependent, ..base }),
        ("pi_mwl", ObjectiveConfig { alpha: 0.0, weights: w(PhaseWeighting::Magnitude), ..base }),
        ("pi_imwl", ObjectiveConfig { alpha: 0.0, weights: w(PhaseWeighting::InverseMagnitude), ..base }),
        ("pi_joint", ObjectiveConfig { alpha: 0.0, weights: w(PhaseWeighting::Joint), ..base }),
        ("combined", ObjectiveConfig { alpha: 0.975, ..base }),
    ]
}

/// Objective gradient with respect to raw network outputs: embeddings (row
/// normalized), masks (through a sigmoid) and unnormalized phase vectors.
fn loss_check(name: &'static str, cfg: ObjectiveConfig, seed: u64, fault: bool) -> anyhow::Result<CheckResult> {
    let (mix, sources) = toy_item(seed);
    let targets = ItemTargets::new(&mix, &sources, &cfg)?;
    let mut rng = seeded(seed ^ 0xabc);
    let n = T * F * D + C * T * F + C * T * F * 2;
    let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let f = |tape: &mut Tape, xv: Var| -> psep_core::Result<Var> {
        if fault {
            tape.inject_fault();
        }
        let nv = T * F * D;
        let v = tape.slice_last(xv, 0, nv)?;
        let v = tape.reshape(v, vec![T * F, D])?;
        let v = tape.normalize_rows(v, 1e-8)?;
        let mut masks = Vec::new();
        let mut phases = Vec::new();
        for c in 0..C {
            let s = nv + c * T * F;
            let m = tape.slice_last(xv, s, s + T * F)?;
            let m = tape.reshape(m, vec![T, F])?;
            masks.push(tape.sigmoid(m));
            let s = nv + C * T * F + c * 2 * T * F;
            let p = tape.slice_last(xv, s, s + 2 * T * F)?;
            phases.push(tape.reshape(p, vec![T * F, 2])?);
        }
        Ok(evaluate(tape, v, &masks, Some(&phases), &targets, &cfg)?.0)
    };
    let report = gradcheck(&f, &Tensor::new(vec![n], x)?, &GradcheckOptions::default())?;
    Ok(CheckResult { name, report })
}

/// End-to-end gradient of the combined objective with respect to every parameter
/// of a toy network (one BLSTM layer each, `T=4, F=8, D=4, C=2`).
fn model_check(name: &'static str, pit: PitCriterion, seed: u64, fault: bool) -> anyhow::Result<CheckResult> {
    let cfg = ModelConfig {
        bins: F,
        layers: 1,
        hidden: 3,
        embed_dim: D,
        sources: C,
        mask_activation: MaskActivation::Sigmoid,
        dropout: 0.0,
        phase_net: true,
        phase_layers: 1,
        phase_hidden: 3,
    };
    let mut model = Model::new(cfg, seed)?;
    let mut rng = seeded(seed ^ 0x5eed);
    for n in ["phase.out.w", "phase.out.b"] {
        model.params.get_mut(n).expect("phase output layer").data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    }
    let (mix, sources) = toy_item(seed);
    let obj = ObjectiveConfig { alpha: 0.5, pit, weights: WeightScheme::new(PhaseWeighting::InverseMagnitude), ..Default::default() };
    let targets = ItemTargets::new(&mix, &sources, &obj)?;
    let shapes: Vec<Vec<usize>> = model.params.iter().map(|(_, p)| p.shape().to_vec()).collect();
    let flat = model.params.flatten();
    let f = |tape: &mut Tape, xv: Var| -> psep_core::Result<Var> {
        if fault {
            tape.inject_fault();
        }
        let mut vars = Vec::new();
        let mut off = 0;
        for s in &shapes {
            let n: usize = s.iter().product();
            let p = tape.slice_last(xv, off, off + n)?;
            vars.push(tape.reshape(p, s.clone())?);
            off += n;
        }
        let fv = model.forward_with(tape, &vars, &mix, Mode::Eval)?;
        Ok(evaluate(tape, fv.embeddings, &fv.masks, fv.phases.as_deref(), &targets, &obj)?.0)
    };
    let n = flat.len();
    let report = gradcheck(&f, &Tensor::new(vec![n], flat)?, &GradcheckOptions::default())?;
    Ok(CheckResult { name, report })
}

/// Runs the selected checks; `fault` corrupts the sigmoid backward rule.
pub fn run_checks(module: Module, fault: bool) -> anyhow::Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    if module != Module::Model {
        for (i, (name, cfg)) in loss_cases().into_iter().enumerate() {
            out.push(loss_check(name, cfg, 100 + i as u64, fault)?);
        }
    }
    if module != Module::Losses {
        out.push(model_check("model_md", PitCriterion::MaskDependent, 200, fault)?);
        out.push(model_check("model_mp", PitCriterion::MaskPhase, 201, fault)?);
    }
    Ok(out)
}
