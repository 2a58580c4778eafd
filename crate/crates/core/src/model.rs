//! Chimera separator (embedding and mask heads over a shared BLSTM body) with
//! a mask-conditioned phase subnetwork, and source reconstruction.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::autodiff::{LstmWeights, Tape, Tensor, Var};
use crate::dsp::{istft, magnitude, phase_field, stft, ComplexSpectrogram, Matrix, PhaseField, StftConfig, Waveform};
use crate::error::{shape_err, Error, Result};
use crate::losses::interleave;
use crate::rng::{derive_seed, seeded};
use crate::targets::{Mask, MaskKind};

/// Rows with norm below this are left unnormalized.
pub const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskActivation {
    Sigmoid,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Frequency bins `F`.
    pub bins: usize,
    pub layers: usize,
    /// Units per direction.
    pub hidden: usize,
    pub embed_dim: usize,
    pub sources: usize,
    pub mask_activation: MaskActivation,
    pub dropout: f64,
    /// `false` builds the mask-only chimera model.
    pub phase_net: bool,
    pub phase_layers: usize,
    pub phase_hidden: usize,
}

impl ModelConfig {
    /// Desk-scale defaults for `bins` frequency bins.
    pub fn desk(bins: usize) -> Self {
        Self {
            bins,
            layers: 2,
            hidden: 64,
            embed_dim: 10,
            sources: 2,
            mask_activation: MaskActivation::Sigmoid,
            dropout: 0.3,
            phase_net: true,
            phase_layers: 2,
            phase_hidden: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.bins == 0 || self.layers == 0 || self.hidden == 0 {
            return bad("bins, layers and hidden must be positive");
        }
        if self.embed_dim == 0 {
            return bad("embedding dimension must be at least 1");
        }
        if self.sources < 2 {
            return bad("need at least 2 sources");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.phase_net && (self.phase_layers == 0 || self.phase_hidden == 0) {
            return bad("phase network needs positive layers and hidden size");
        }
        Ok(())
    }

    /// Names and shapes of every parameter, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let (f, h) = (self.bins, self.hidden);
        blstm_layout(&mut out, "chimera", f, h, self.layers);
        out.push(("chimera.embed.w".into(), vec![2 * h, f * self.embed_dim]));
        out.push(("chimera.embed.b".into(), vec![f * self.embed_dim]));
        out.push(("chimera.mask.w".into(), vec![2 * h, f * self.sources]));
        out.push(("chimera.mask.b".into(), vec![f * self.sources]));
        if self.phase_net {
            let ph = self.phase_hidden;
            blstm_layout(&mut out, "phase", 3 * f, ph, self.phase_layers);
            out.push(("phase.out.w".into(), vec![2 * ph, 2 * f]));
            out.push(("phase.out.b".into(), vec![2 * f]));
        }
        out
    }
}

fn blstm_layout(out: &mut Vec<(String, Vec<usize>)>, prefix: &str, input: usize, h: usize, layers: usize) {
    for l in 0..layers {
        let inp = if l == 0 { input } else { 2 * h };
        for dir in ["fw", "bw"] {
            out.push((format!("{prefix}.lstm{l}.{dir}.w_ih"), vec![inp, 4 * h]));
            out.push((format!("{prefix}.lstm{l}.{dir}.w_hh"), vec![h, 4 * h]));
            out.push((format!("{prefix}.lstm{l}.{dir}.bias"), vec![4 * h]));
        }
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), t));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// All values concatenated in storage order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active, masks drawn from `seed`.
    Train { seed: u64 },
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// One handle per parameter, in storage order.
    pub params: Vec<Var>,
    /// `[T*F, D]`, unit rows.
    pub embeddings: Var,
    /// `C` masks of shape `[T, F]`.
    pub masks: Vec<Var>,
    /// `C` phase estimates of shape `[T*F, 2]`; `None` for the mask-only model.
    pub phases: Option<Vec<Var>>,
}

/// Plain-value separator outputs.
#[derive(Debug, Clone)]
pub struct SeparationOutput {
    pub embeddings: Matrix,
    pub masks: Vec<Mask>,
    pub phases: Vec<PhaseField>,
    pub reconstructed: Vec<ComplexSpectrogram>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

struct Dropout {
    rate: f64,
    rng: Option<crate::rng::Rng>,
}

impl Dropout {
    fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_mut() else { return Ok(x) };
        if self.rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - self.rate);
        let shape = tape.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask = (0..n).map(|_| if rng.gen::<f64>() < self.rate { 0.0 } else { keep }).collect();
        let m = tape.constant(shape, mask)?;
        tape.mul(x, m)
    }
}

impl Model {
    /// Random initialization: LSTM weights uniform in `+-1/sqrt(H)` with forget
    /// bias 1, heads uniform in `+-1/sqrt(fan_in)`, phase output layer zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(derive_seed(seed, 0x6d6f64656c));
        let mut params = ParamStore::new();
        for (name, shape) in config.layout() {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if name.starts_with("phase.out") {
                vec![0.0; n]
            } else if name.contains(".lstm") {
                let h = *shape.last().unwrap() / 4;
                let r = 1.0 / libm::sqrt(h as f64);
                let mut d: Vec<f64> = (0..n).map(|_| rng.gen_range(-r..r)).collect();
                if name.ends_with(".bias") {
                    d[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
                }
                d
            } else if name.ends_with(".b") {
                vec![0.0; n]
            } else {
                let r = 1.0 / libm::sqrt(shape[0] as f64);
                (0..n).map(|_| rng.gen_range(-r..r)).collect()
            };
            params.push(name, Tensor::param(shape, data)?);
        }
        Ok(Self { config, params })
    }

    /// Wraps loaded parameters after checking names and shapes against the layout.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != params.len() {
            return Err(shape_err("model", format!("expected {} parameters, got {}", layout.len(), params.len())));
        }
        for ((name, shape), (pn, t)) in layout.iter().zip(params.iter()) {
            if name != pn || shape.as_slice() != t.shape() {
                return Err(shape_err("model", format!("expected {name} {shape:?}, got {pn} {:?}", t.shape())));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("parameter {pn}")));
            }
        }
        Ok(Self { config, params })
    }

    /// Whether the phase output layer is identically zero.
    pub fn phase_output_is_zero(&self) -> bool {
        ["phase.out.w", "phase.out.b"]
            .iter()
            .all(|n| self.params.get(n).is_some_and(|t| t.data().iter().all(|&v| v == 0.0)))
    }

    /// Records the full network on `tape`, creating one leaf per parameter.
    pub fn forward(&self, tape: &mut Tape, mixture: &ComplexSpectrogram, mode: Mode) -> Result<ForwardVars> {
        let trainable = matches!(mode, Mode::Train { .. });
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|(_, t)| tape.leaf(&t.clone().with_requires_grad(trainable)))
            .collect();
        self.forward_with(tape, &vars, mixture, mode)
    }

    /// Like [`Model::forward`] with caller-supplied parameter handles.
    pub fn forward_with(&self, tape: &mut Tape, params: &[Var], mixture: &ComplexSpectrogram, mode: Mode) -> Result<ForwardVars> {
        let cfg = &self.config;
        let layout = cfg.layout();
        if params.len() != layout.len() {
            return Err(shape_err("model", format!("{} parameter handles for {} parameters", params.len(), layout.len())));
        }
        if mixture.bins() != cfg.bins {
            return Err(shape_err("model", format!("mixture has {} bins, model expects {}", mixture.bins(), cfg.bins)));
        }
        if mixture.frames() == 0 {
            return Err(Error::InvalidArgument("empty spectrogram".into()));
        }
        if !mixture.re.data().iter().chain(mixture.im.data()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("mixture spectrogram".into()));
        }
        let mut drop = Dropout {
            rate: cfg.dropout,
            rng: match mode {
                Mode::Train { seed } => Some(seeded(seed)),
                Mode::Eval => None,
            },
        };
        let (t, f) = (mixture.frames(), cfg.bins);
        let mut next = params.iter().copied();
        let mag = magnitude(mixture);

        let feat = tape.constant(vec![t, f], mag.data().iter().map(|&m| libm::log1p(m)).collect())?;
        let body = blstm(tape, feat, &mut next, cfg.layers, &mut drop)?;

        let (ew, eb) = (next.next().unwrap(), next.next().unwrap());
        let e = tape.matmul(body, ew)?;
        let e = tape.add_row(e, eb)?;
        let e = tape.tanh(e);
        let e = tape.reshape(e, vec![t * f, cfg.embed_dim])?;
        let embeddings = tape.normalize_rows(e, NORM_EPS)?;

        let (mw, mb) = (next.next().unwrap(), next.next().unwrap());
        let m = tape.matmul(body, mw)?;
        let m = tape.add_row(m, mb)?;
        let m = match cfg.mask_activation {
            MaskActivation::Sigmoid => tape.sigmoid(m),
            MaskActivation::Relu => tape.relu(m),
        };
        let masks = (0..cfg.sources)
            .map(|c| tape.slice_last(m, c * f, (c + 1) * f))
            .collect::<Result<Vec<_>>>()?;

        let phases = if cfg.phase_net {
            let rest: Vec<Var> = next.collect();
            let ctx = PhaseContext::new(mixture);
            let mut out = Vec::with_capacity(cfg.sources);
            for &mask in &masks {
                out.push(phase_subnet(tape, &rest, cfg.phase_layers, &ctx, mask, &mut drop)?);
            }
            Some(out)
        } else {
            None
        };
        Ok(ForwardVars { params: params.to_vec(), embeddings, masks, phases })
    }

    /// Eval-mode forward pass returning plain values and reconstructions.
    pub fn infer(&self, mixture: &ComplexSpectrogram) -> Result<SeparationOutput> {
        let mut tape = Tape::new();
        let fv = self.forward(&mut tape, mixture, Mode::Eval)?;
        let (t, f) = (mixture.frames(), mixture.bins());
        let embeddings = Matrix::from_vec(t * f, self.config.embed_dim, tape.value(fv.embeddings).to_vec());
        let masks: Vec<Mask> = fv
            .masks
            .iter()
            .map(|&m| Mask { values: Matrix::from_vec(t, f, tape.value(m).to_vec()), kind: MaskKind::Estimated })
            .collect();
        let phases: Vec<PhaseField> = match &fv.phases {
            Some(p) => p.iter().map(|&v| deinterleave(tape.value(v), t, f)).collect(),
            None => vec![phase_field(mixture, None); masks.len()],
        };
        let reconstructed = masks
            .iter()
            .zip(&phases)
            .map(|(m, p)| reconstruct(mixture, &m.values, p))
            .collect::<Result<Vec<_>>>()?;
        Ok(SeparationOutput { embeddings, masks, phases, reconstructed })
    }

    /// Waveforms from estimated masks and estimated phases.
    pub fn separate(&self, mixture: &Waveform, stft_cfg: &StftConfig) -> Result<Vec<Waveform>> {
        let spec = stft(mixture, stft_cfg)?;
        let out = self.infer(&spec)?;
        out.reconstructed.iter().map(|s| istft(s, stft_cfg, mixture.len())).collect()
    }

    /// Waveforms from estimated masks with the noisy mixture phase.
    pub fn separate_mask_only(&self, mixture: &Waveform, stft_cfg: &StftConfig) -> Result<Vec<Waveform>> {
        let spec = stft(mixture, stft_cfg)?;
        let out = self.infer(&spec)?;
        let noisy = phase_field(&spec, None);
        out.masks
            .iter()
            .map(|m| istft(&reconstruct(&spec, &m.values, &noisy)?, stft_cfg, mixture.len()))
            .collect()
    }
}

fn blstm(tape: &mut Tape, mut x: Var, params: &mut impl Iterator<Item = Var>, layers: usize, drop: &mut Dropout) -> Result<Var> {
    for _ in 0..layers {
        let mut take = || LstmWeights { w_ih: params.next().unwrap(), w_hh: params.next().unwrap(), bias: params.next().unwrap() };
        let (fw, bw) = (take(), take());
        let a = tape.lstm(x, fw, false)?;
        let b = tape.lstm(x, bw, true)?;
        let h = tape.concat(&[a, b])?;
        x = drop.apply(tape, h)?;
    }
    Ok(x)
}

/// Mixture-derived constants shared by every source's phase pass.
struct PhaseContext {
    t: usize,
    f: usize,
    scaled_mag: Vec<f64>,
    scaled_re: Vec<f64>,
    scaled_im: Vec<f64>,
    mix: Vec<f64>,
    mag: Vec<f64>,
    unit: Vec<f64>,
}

impl PhaseContext {
    fn new(mixture: &ComplexSpectrogram) -> Self {
        let mag = magnitude(mixture);
        let peak = mag.max();
        let s = if peak > 0.0 { 1.0 / peak } else { 1.0 };
        let mut mix = Vec::with_capacity(2 * mag.data().len());
        for (&r, &i) in mixture.re.data().iter().zip(mixture.im.data()) {
            mix.push(r);
            mix.push(i);
        }
        Self {
            t: mixture.frames(),
            f: mixture.bins(),
            scaled_mag: mag.data().iter().map(|v| v * s).collect(),
            scaled_re: mixture.re.data().iter().map(|v| v * s).collect(),
            scaled_im: mixture.im.data().iter().map(|v| v * s).collect(),
            mix,
            unit: interleave(&phase_field(mixture, None)),
            mag: mag.into_vec(),
        }
    }
}

fn phase_subnet(tape: &mut Tape, params: &[Var], layers: usize, ctx: &PhaseContext, mask: Var, drop: &mut Dropout) -> Result<Var> {
    let (t, f) = (ctx.t, ctx.f);
    let xm = tape.constant(vec![t, f], ctx.scaled_mag.clone())?;
    let est = tape.mul(mask, xm)?;
    let re = tape.constant(vec![t, f], ctx.scaled_re.clone())?;
    let im = tape.constant(vec![t, f], ctx.scaled_im.clone())?;
    let input = tape.concat(&[est, re, im])?;
    let mut it = params.iter().copied();
    let h = blstm(tape, input, &mut it, layers, drop)?;
    let (w, b) = (it.next().unwrap(), it.next().unwrap());
    let d = tape.matmul(h, w)?;
    let d = tape.add_row(d, b)?;
    let d = tape.reshape(d, vec![t * f, 2])?;
    tape.residual_phase(d, &ctx.mix, &ctx.mag, &ctx.unit, NORM_EPS)
}

/// Splits `[T*F, 2]` interleaved `(cos, sin)` values into a phase field.
pub fn deinterleave(v: &[f64], t: usize, f: usize) -> PhaseField {
    PhaseField {
        cos: Matrix::from_vec(t, f, v.iter().step_by(2).copied().collect()),
        sin: Matrix::from_vec(t, f, v.iter().skip(1).step_by(2).copied().collect()),
    }
}

/// `|X| * M * (cos theta + j sin theta)`.
pub fn reconstruct(mixture: &ComplexSpectrogram, mask: &Matrix, phase: &PhaseField) -> Result<ComplexSpectrogram> {
    let shape = mixture.re.shape();
    if mask.shape() != shape || phase.shape() != shape {
        return Err(shape_err(
            "reconstruct",
            format!("mixture {:?}, mask {:?}, phase {:?}", shape, mask.shape(), phase.shape()),
        ));
    }
    let gain = magnitude(mixture).zip_map(mask, |x, m| x * m);
    Ok(ComplexSpectrogram {
        re: gain.zip_map(&phase.cos, |g, c| g * c),
        im: gain.zip_map(&phase.sin, |g, s| g * s),
        config: mixture.config,
        sample_rate_hz: mixture.sample_rate_hz,
    })
}

/// Eval-mode embeddings and masks.
pub fn chimera_forward(model: &Model, mixture: &ComplexSpectrogram) -> Result<(Matrix, Vec<Mask>)> {
    let out = model.infer(mixture)?;
    Ok((out.embeddings, out.masks))
}

/// Phase estimate for one source given its mask; the noisy phase when the model has no phase network.
pub fn phase_forward(model: &Model, mask: &Matrix, mixture: &ComplexSpectrogram) -> Result<PhaseField> {
    let (t, f) = mixture.re.shape();
    if mask.shape() != (t, f) {
        return Err(shape_err("phase_forward", format!("mask {:?} vs mixture {:?}", mask.shape(), (t, f))));
    }
    if !model.config.phase_net {
        return Ok(phase_field(mixture, None));
    }
    let n_phase = 6 * model.config.phase_layers + 2;
    let n = model.params.len();
    let mut tape = Tape::new();
    let vars: Vec<Var> = model.params.iter().skip(n - n_phase).map(|(_, p)| tape.leaf(&p.clone().with_requires_grad(false))).collect();
    let m = tape.constant(vec![t, f], mask.data().to_vec())?;
    let mut drop = Dropout { rate: 0.0, rng: None };
    let out = phase_subnet(&mut tape, &vars, model.config.phase_layers, &PhaseContext::new(mixture), m, &mut drop)?;
    Ok(deinterleave(tape.value(out), t, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck, GradcheckOptions};
    use crate::losses::{evaluate, ItemTargets, ObjectiveConfig, PitCriterion};

    fn toy_spec(seed: u64, t: usize, f: usize) -> ComplexSpectrogram {
        let mut rng = seeded(seed);
        let n = t * f;
        ComplexSpectrogram {
            re: Matrix::from_vec(t, f, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            im: Matrix::from_vec(t, f, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            config: StftConfig::default(),
            sample_rate_hz: 8000,
        }
    }

    fn toy_config() -> ModelConfig {
        ModelConfig { bins: 8, layers: 1, hidden: 3, embed_dim: 4, phase_hidden: 3, ..ModelConfig::desk(8) }
    }

    fn randomize_phase_out(m: &mut Model, seed: u64) {
        let mut rng = seeded(seed);
        for name in ["phase.out.w", "phase.out.b"] {
            m.params.get_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
    }

    #[test]
    fn output_contracts_hold_for_random_params() {
        for act in [MaskActivation::Sigmoid, MaskActivation::Relu] {
            let mut m = Model::new(ModelConfig { mask_activation: act, ..toy_config() }, 1).unwrap();
            randomize_phase_out(&mut m, 2);
            let x = toy_spec(3, 5, 8);
            let out = m.infer(&x).unwrap();
            for r in 0..out.embeddings.rows() {
                let n: f64 = out.embeddings.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-6);
            }
            for mask in &out.masks {
                for &v in mask.values.data() {
                    match act {
                        MaskActivation::Sigmoid => assert!(v > 0.0 && v < 1.0),
                        MaskActivation::Relu => assert!(v >= 0.0),
                    }
                }
            }
            for p in &out.phases {
                assert!(p.max_norm_error() < 1e-6);
            }
            assert_eq!(out.reconstructed.len(), 2);
        }
    }

    #[test]
    fn deterministic_forward() {
        let m = Model::new(toy_config(), 4).unwrap();
        let x = toy_spec(5, 6, 8);
        let run = |mode| {
            let mut tape = Tape::new();
            let fv = m.forward(&mut tape, &x, mode).unwrap();
            tape.value(fv.masks[0]).to_vec()
        };
        assert_eq!(run(Mode::Eval), run(Mode::Eval));
        assert_eq!(run(Mode::Train { seed: 9 }), run(Mode::Train { seed: 9 }));
        assert_ne!(run(Mode::Train { seed: 9 }), run(Mode::Eval));
    }

    #[test]
    fn zero_output_layer_returns_noisy_phase() {
        let m = Model::new(toy_config(), 6).unwrap();
        assert!(m.phase_output_is_zero());
        let x = toy_spec(7, 4, 8);
        let out = m.infer(&x).unwrap();
        let noisy = phase_field(&x, None);
        for p in &out.phases {
            assert_eq!(p, &noisy);
        }
    }

    #[test]
    fn phase_forward_matches_full_pass() {
        let mut m = Model::new(toy_config(), 8).unwrap();
        randomize_phase_out(&mut m, 9);
        let x = toy_spec(10, 4, 8);
        let out = m.infer(&x).unwrap();
        let p = phase_forward(&m, &out.masks[1].values, &x).unwrap();
        assert_eq!(p, out.phases[1]);
    }

    #[test]
    fn reconstruct_examples() {
        let x = toy_spec(11, 3, 8);
        let ones = Matrix::filled(3, 8, 1.0);
        let y = reconstruct(&x, &ones, &phase_field(&x, None)).unwrap();
        for (a, b) in y.re.data().iter().chain(y.im.data()).zip(x.re.data().iter().chain(x.im.data())) {
            assert!((a - b).abs() < 1e-10);
        }
        let z = reconstruct(&x, &Matrix::zeros(3, 8), &phase_field(&x, None)).unwrap();
        assert!(z.re.data().iter().chain(z.im.data()).all(|&v| v == 0.0));

        let mut rng = seeded(12);
        let mask = Matrix::from_vec(3, 8, (0..24).map(|_| rng.gen_range(0.0..2.0)).collect());
        let th: Vec<f64> = (0..24).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let ph = PhaseField {
            cos: Matrix::from_vec(3, 8, th.iter().map(|v| v.cos()).collect()),
            sin: Matrix::from_vec(3, 8, th.iter().map(|v| v.sin()).collect()),
        };
        let y = reconstruct(&x, &mask, &ph).unwrap();
        let want = magnitude(&x).zip_map(&mask, |a, b| a * b);
        for (a, b) in magnitude(&y).data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_non_finite_input() {
        let m = Model::new(toy_config(), 1).unwrap();
        let mut x = toy_spec(2, 3, 8);
        x.re.data_mut()[4] = f64::NAN;
        assert!(matches!(m.infer(&x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn from_params_checks_layout() {
        let m = Model::new(toy_config(), 1).unwrap();
        assert!(Model::from_params(m.config, m.params.clone()).is_ok());
        let other = Model::new(ModelConfig { hidden: 4, ..toy_config() }, 1).unwrap();
        assert!(Model::from_params(m.config, other.params).is_err());
    }

    #[test]
    fn gradcheck_full_model() {
        let mut m = Model::new(ModelConfig { dropout: 0.0, ..toy_config() }, 13).unwrap();
        randomize_phase_out(&mut m, 14);
        let (t, f) = (4, 8);
        let sources: Vec<_> = (0..2).map(|k| toy_spec(16 + k, t, f)).collect();
        let x = sources[0].add(&sources[1]).unwrap();
        let cfg = ObjectiveConfig { alpha: 0.5, pit: PitCriterion::MaskPhase, ..Default::default() };
        let targets = ItemTargets::new(&x, &sources, &cfg).unwrap();
        let shapes: Vec<Vec<usize>> = m.params.iter().map(|(_, p)| p.shape().to_vec()).collect();
        let flat = m.params.flatten();
        let f = |tape: &mut Tape, xv: Var| -> Result<Var> {
            let mut vars = Vec::new();
            let mut off = 0;
            for s in &shapes {
                let n: usize = s.iter().product();
                let p = tape.slice_last(xv, off, off + n)?;
                vars.push(tape.reshape(p, s.clone())?);
                off += n;
            }
            let fv = m.forward_with(tape, &vars, &x, Mode::Eval)?;
            Ok(evaluate(tape, fv.embeddings, &fv.masks, fv.phases.as_deref(), &targets, &cfg)?.0)
        };
        let n = flat.len();
        let report = gradcheck(&f, &Tensor::new(vec![n], flat).unwrap(), &GradcheckOptions::default()).unwrap();
        assert!(report.passed, "{report:?}");
    }
}
