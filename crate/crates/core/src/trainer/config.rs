use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::losses::{MiVariant, ObjectiveConfig, PhaseWeighting, PitCriterion, WeightScheme, DEFAULT_GAMMA};
use crate::model::{MaskActivation, ModelConfig};
use crate::targets::DEFAULT_VA_THRESHOLD_DB;

/// Every training, model and analysis setting.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub alpha: f64,
    /// Combination weight of the second curriculum phase.
    pub curriculum_alpha: f64,
    pub pit_criterion: PitCriterion,
    pub weight_scheme: PhaseWeighting,
    pub gamma: f64,
    pub mask_activation: MaskActivation,
    pub mi_variant: MiVariant,
    pub seed: u64,
    pub batch_size: usize,
    pub chunk_frames: usize,
    pub clip_norm: f64,
    pub dc_va: bool,
    pub va_threshold_db: f64,
    pub layers: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub dropout: f64,
    pub phase_net: bool,
    pub phase_layers: usize,
    pub phase_hidden: usize,
    pub sources: usize,
    pub fft_size: usize,
    pub hop: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            max_epochs: 100,
            patience: 10,
            alpha: 0.975,
            curriculum_alpha: 0.5,
            pit_criterion: PitCriterion::MaskDependent,
            weight_scheme: PhaseWeighting::Plain,
            gamma: DEFAULT_GAMMA,
            mask_activation: MaskActivation::Sigmoid,
            mi_variant: MiVariant::Tpsa,
            seed: 0,
            batch_size: 16,
            chunk_frames: 400,
            clip_norm: 5.0,
            dc_va: true,
            va_threshold_db: DEFAULT_VA_THRESHOLD_DB,
            layers: 2,
            hidden: 64,
            embed_dim: 10,
            dropout: 0.3,
            phase_net: true,
            phase_layers: 2,
            phase_hidden: 64,
            sources: 2,
            fft_size: 256,
            hop: 64,
        }
    }
}

/// Config keys in canonical order.
pub const CONFIG_KEYS: &[&str] = &[
    "lr",
    "max_epochs",
    "patience",
    "alpha",
    "curriculum_alpha",
    "pit_criterion",
    "weight_scheme",
    "gamma",
    "mask_activation",
    "mi_variant",
    "seed",
    "batch_size",
    "chunk_frames",
    "clip_norm",
    "dc_va",
    "va_threshold_db",
    "layers",
    "hidden",
    "embed_dim",
    "dropout",
    "phase_net",
    "phase_layers",
    "phase_hidden",
    "sources",
    "fft_size",
    "hop",
];

fn num<T: core::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn choice<T: Copy>(key: &str, v: &str, options: &[(&str, T)]) -> Result<T> {
    options.iter().find(|(n, _)| *n == v).map(|(_, t)| *t).ok_or_else(|| {
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        Error::Config(format!("{key}: {v:?} is not one of {}", names.join("|")))
    })
}

const CRITERIA: &[(&str, PitCriterion)] = &[("mp", PitCriterion::MaskPhase), ("md", PitCriterion::MaskDependent)];
const WEIGHTS: &[(&str, PhaseWeighting)] = &[
    ("plain", PhaseWeighting::Plain),
    ("mwl", PhaseWeighting::Magnitude),
    ("imwl", PhaseWeighting::InverseMagnitude),
    ("joint", PhaseWeighting::Joint),
];
const ACTIVATIONS: &[(&str, MaskActivation)] = &[("sigmoid", MaskActivation::Sigmoid), ("relu", MaskActivation::Relu)];
const VARIANTS: &[(&str, MiVariant)] = &[("msa", MiVariant::Msa), ("tpsa", MiVariant::Tpsa)];
const BOOLS: &[(&str, bool)] = &[("true", true), ("false", false)];

fn name_of<T: PartialEq + Copy>(options: &[(&'static str, T)], v: T) -> &'static str {
    options.iter().find(|(_, t)| *t == v).map(|(n, _)| *n).unwrap_or("?")
}

impl TrainConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "lr" => self.lr = num(key, v)?,
            "max_epochs" => self.max_epochs = num(key, v)?,
            "patience" => self.patience = num(key, v)?,
            "alpha" => self.alpha = num(key, v)?,
            "curriculum_alpha" => self.curriculum_alpha = num(key, v)?,
            "pit_criterion" => self.pit_criterion = choice(key, v, CRITERIA)?,
            "weight_scheme" => self.weight_scheme = choice(key, v, WEIGHTS)?,
            "gamma" => self.gamma = num(key, v)?,
            "mask_activation" => self.mask_activation = choice(key, v, ACTIVATIONS)?,
            "mi_variant" => self.mi_variant = choice(key, v, VARIANTS)?,
            "seed" => self.seed = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "chunk_frames" => self.chunk_frames = num(key, v)?,
            "clip_norm" => self.clip_norm = num(key, v)?,
            "dc_va" => self.dc_va = choice(key, v, BOOLS)?,
            "va_threshold_db" => self.va_threshold_db = num(key, v)?,
            "layers" => self.layers = num(key, v)?,
            "hidden" => self.hidden = num(key, v)?,
            "embed_dim" => self.embed_dim = num(key, v)?,
            "dropout" => self.dropout = num(key, v)?,
            "phase_net" => self.phase_net = choice(key, v, BOOLS)?,
            "phase_layers" => self.phase_layers = num(key, v)?,
            "phase_hidden" => self.phase_hidden = num(key, v)?,
            "sources" => self.sources = num(key, v)?,
            "fft_size" => self.fft_size = num(key, v)?,
            "hop" => self.hop = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Text form of one key.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "lr" => format!("{:?}", self.lr),
            "max_epochs" => self.max_epochs.to_string(),
            "patience" => self.patience.to_string(),
            "alpha" => format!("{:?}", self.alpha),
            "curriculum_alpha" => format!("{:?}", self.curriculum_alpha),
            "pit_criterion" => name_of(CRITERIA, self.pit_criterion).into(),
            "weight_scheme" => name_of(WEIGHTS, self.weight_scheme).into(),
            "gamma" => format!("{:?}", self.gamma),
            "mask_activation" => name_of(ACTIVATIONS, self.mask_activation).into(),
            "mi_variant" => name_of(VARIANTS, self.mi_variant).into(),
            "seed" => self.seed.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "chunk_frames" => self.chunk_frames.to_string(),
            "clip_norm" => format!("{:?}", self.clip_norm),
            "dc_va" => self.dc_va.to_string(),
            "va_threshold_db" => format!("{:?}", self.va_threshold_db),
            "layers" => self.layers.to_string(),
            "hidden" => self.hidden.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "dropout" => format!("{:?}", self.dropout),
            "phase_net" => self.phase_net.to_string(),
            "phase_layers" => self.phase_layers.to_string(),
            "phase_hidden" => self.phase_hidden.to_string(),
            "sources" => self.sources.to_string(),
            "fft_size" => self.fft_size.to_string(),
            "hop" => self.hop.to_string(),
            _ => return None,
        })
    }

    /// Builds a config from `(key, value)` pairs that must name every key exactly once.
    pub fn from_entries<'a>(entries: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = [false; CONFIG_KEYS.len()];
        for (k, v) in entries {
            let idx = CONFIG_KEYS.iter().position(|c| *c == k).ok_or_else(|| Error::Config(format!("unknown key {k:?}")))?;
            if seen[idx] {
                return Err(Error::Config(format!("duplicate key {k:?}")));
            }
            seen[idx] = true;
            cfg.set(k, v)?;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("missing key {:?}", CONFIG_KEYS[i])));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// `key = value` lines in canonical order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in CONFIG_KEYS {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&self.get(k).unwrap());
            out.push('\n');
        }
        out
    }

    /// Parses `key = value` lines with `#` comments.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_entries(parse_kv(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be a finite non-negative number, got {}", self.lr));
        }
        for (k, a) in [("alpha", self.alpha), ("curriculum_alpha", self.curriculum_alpha)] {
            if !(0.0..=1.0).contains(&a) {
                return bad(format!("{k} must be in [0, 1], got {a}"));
            }
        }
        if self.patience == 0 || self.max_epochs == 0 || self.batch_size == 0 || self.chunk_frames == 0 {
            return bad("patience, max_epochs, batch_size and chunk_frames must be at least 1".into());
        }
        if !(self.gamma >= 0.0) {
            return bad(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        self.stft().validate()?;
        self.model_config().validate()
    }

    pub fn stft(&self) -> StftConfig {
        StftConfig { fft_size: self.fft_size, hop: self.hop, ..StftConfig::default() }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            bins: self.fft_size / 2 + 1,
            layers: self.layers,
            hidden: self.hidden,
            embed_dim: self.embed_dim,
            sources: self.sources,
            mask_activation: self.mask_activation,
            dropout: self.dropout,
            phase_net: self.phase_net,
            phase_layers: self.phase_layers,
            phase_hidden: self.phase_hidden,
        }
    }

    pub fn objective(&self, alpha: f64) -> ObjectiveConfig {
        ObjectiveConfig {
            alpha,
            mi_variant: self.mi_variant,
            pit: self.pit_criterion,
            weights: WeightScheme { weighting: self.weight_scheme, gamma: self.gamma },
            dc_va: self.dc_va,
            va_threshold_db: self.va_threshold_db,
        }
    }
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_kv(text: &str) -> Result<Vec<(&str, &str)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
        out.push((k.trim(), v.trim()));
    }
    Ok(out)
}
