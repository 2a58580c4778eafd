//! Optimization loop: chunked mini-batches, Adam with global-norm clipping,
//! validation-based early stopping, the two-phase combination-weight
//! curriculum, and the checkpoint codec.

mod adam;
mod checkpoint;
mod config;

use alloc::vec::Vec;

pub use adam::{adam_step, check_finite, clip_grad_norm, AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::{parse_kv, TrainConfig, CONFIG_KEYS};

use crate::autodiff::Tape;
use crate::datagen::{batch_iter, Chunk, MixtureItem};
use crate::dsp::{stft, ComplexSpectrogram, StftConfig};
use crate::error::{Error, Result};
use crate::losses::{evaluate, ItemTargets, ObjectiveConfig};
use crate::model::{Mode, Model};
use crate::rng::derive_seed;

/// Runs independent per-item closures; implementations may run them concurrently.
pub trait ItemMapper: Sync {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs items one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl ItemMapper for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

/// Mean loss terms over a set of examples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossMeans {
    pub dc: f64,
    pub mi: f64,
    pub pi: f64,
    pub total: f64,
}

impl LossMeans {
    fn mean(parts: &[LossMeans]) -> Self {
        let n = parts.len().max(1) as f64;
        let mut out = LossMeans::default();
        for p in parts {
            out.dc += p.dc / n;
            out.mi += p.mi / n;
            out.pi += p.pi / n;
            out.total += p.total / n;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based, counted across curriculum phases.
    pub epoch: usize,
    /// Curriculum phase, 1 or 2.
    pub phase: u8,
    pub alpha: f64,
    pub lr: f64,
    pub train: LossMeans,
    pub valid: LossMeans,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    /// State at the best validation epoch.
    pub best: Checkpoint,
    pub stopped_early: bool,
}

#[derive(Debug, Clone)]
pub struct CurriculumOutcome {
    pub phase1: TrainOutcome,
    pub phase2: TrainOutcome,
    /// First epoch trained with the second combination weight.
    pub transition_epoch: usize,
    /// Parameters phase 2 started from.
    pub phase2_initial: crate::model::ParamStore,
}

impl CurriculumOutcome {
    pub fn log(&self) -> Vec<EpochRecord> {
        self.phase1.log.iter().chain(&self.phase2.log).copied().collect()
    }
}

/// Spectrograms of one item's mixture and references.
pub struct ItemSpectra {
    pub mixture: ComplexSpectrogram,
    pub sources: Vec<ComplexSpectrogram>,
}

impl ItemSpectra {
    pub fn new(item: &MixtureItem, cfg: &StftConfig) -> Result<Self> {
        Ok(Self { mixture: stft(&item.mixture, cfg)?, sources: item.sources.iter().map(|s| stft(s, cfg)).collect::<Result<_>>()? })
    }

    /// Zero-padded model input and targets over the valid frames of `chunk`.
    pub fn chunk(&self, chunk: &Chunk, obj: &ObjectiveConfig) -> Result<(ComplexSpectrogram, ItemTargets)> {
        let input = self.mixture.slice_frames(chunk.start, chunk.frames);
        let mix = self.mixture.slice_frames(chunk.start, chunk.valid);
        let srcs: Vec<_> = self.sources.iter().map(|s| s.slice_frames(chunk.start, chunk.valid)).collect();
        Ok((input, ItemTargets::new(&mix, &srcs, obj)?))
    }
}

struct ItemResult {
    grads: Vec<Vec<f64>>,
    loss: LossMeans,
}

fn means(b: &crate::losses::LossBreakdown) -> LossMeans {
    LossMeans { dc: b.dc, mi: b.mi, pi: b.pi, total: b.total }
}

fn item_gradient(model: &Model, input: &ComplexSpectrogram, targets: &ItemTargets, obj: &ObjectiveConfig, seed: u64) -> Result<ItemResult> {
    let mut tape = Tape::new();
    let fv = model.forward(&mut tape, input, Mode::Train { seed })?;
    let (loss, b) = evaluate(&mut tape, fv.embeddings, &fv.masks, fv.phases.as_deref(), targets, obj)?;
    if !b.total.is_finite() {
        return Ok(ItemResult { grads: Vec::new(), loss: means(&b) });
    }
    let g = tape.backward(loss)?;
    let grads = fv.params.iter().map(|&p| g.get_or_zeros(&tape, p)).collect();
    Ok(ItemResult { grads, loss: means(&b) })
}

/// Eval-mode loss of `model` over whole items.
pub fn validate<M: ItemMapper>(model: &Model, items: &[MixtureItem], cfg: &TrainConfig, alpha: f64, mapper: &M) -> Result<LossMeans> {
    let obj = cfg.objective(alpha);
    let stft_cfg = cfg.stft();
    let parts = mapper.map(items.len(), |i| -> Result<LossMeans> {
        let spec = ItemSpectra::new(&items[i], &stft_cfg)?;
        let targets = ItemTargets::new(&spec.mixture, &spec.sources, &obj)?;
        let mut tape = Tape::new();
        let fv = model.forward(&mut tape, &spec.mixture, Mode::Eval)?;
        Ok(means(&evaluate(&mut tape, fv.embeddings, &fv.masks, fv.phases.as_deref(), &targets, &obj)?.1))
    });
    Ok(LossMeans::mean(&parts.into_iter().collect::<Result<Vec<_>>>()?))
}

fn train_phase<M: ItemMapper>(
    cfg: &TrainConfig,
    alpha: f64,
    phase: u8,
    first_epoch: usize,
    model: &mut Model,
    train_items: &[MixtureItem],
    valid_items: &[MixtureItem],
    mapper: &M,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_items.is_empty() || valid_items.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let obj = cfg.objective(alpha);
    let stft_cfg = cfg.stft();
    let frames: Vec<usize> = train_items.iter().map(|it| stft_cfg.frames_for(it.mixture.len())).collect();
    let mut adam = AdamState::new(&model.params);
    let mut best: Option<Checkpoint> = None;
    let mut since_best = 0;
    let mut log = Vec::new();
    let mut stopped_early = false;
    let base = derive_seed(cfg.seed, phase as u64);

    for e in 0..cfg.max_epochs {
        let epoch = first_epoch + e;
        let batches = batch_iter(&frames, cfg.chunk_frames, cfg.batch_size, derive_seed(base, 1), e)?;
        let mut epoch_losses = Vec::new();
        for (bi, batch) in batches.iter().enumerate() {
            let m: &Model = model;
            let results = mapper.map(batch.len(), |k| -> Result<ItemResult> {
                let chunk = &batch[k];
                let spec = ItemSpectra::new(&train_items[chunk.item], &stft_cfg)?;
                let (input, targets) = spec.chunk(chunk, &obj)?;
                let seed = derive_seed(derive_seed(derive_seed(base, 2), e as u64), (bi * cfg.batch_size + k) as u64);
                item_gradient(m, &input, &targets, &obj, seed)
            });
            let results = results.into_iter().collect::<Result<Vec<_>>>()?;
            if results.iter().any(|r| !r.loss.total.is_finite() || r.grads.is_empty()) {
                return Err(Error::Diverged { epoch, batch: bi + 1 });
            }
            let scale = 1.0 / results.len() as f64;
            let mut grads: Vec<Vec<f64>> = model.params.iter().map(|(_, p)| alloc::vec![0.0; p.numel()]).collect();
            for r in &results {
                for (acc, g) in grads.iter_mut().zip(&r.grads) {
                    acc.iter_mut().zip(g).for_each(|(a, v)| *a += v * scale);
                }
            }
            check_finite(&model.params, &grads)?;
            clip_grad_norm(&mut grads, cfg.clip_norm);
            adam_step(&mut model.params, &grads, &mut adam, cfg.lr)?;
            epoch_losses.push(LossMeans::mean(&results.iter().map(|r| r.loss).collect::<Vec<_>>()));
        }
        let valid = validate(model, valid_items, cfg, alpha, mapper)?;
        if !valid.total.is_finite() {
            return Err(Error::Diverged { epoch, batch: batches.len() });
        }
        let improved = best.as_ref().map_or(true, |b| valid.total < b.best_val);
        if improved {
            since_best = 0;
            best = Some(Checkpoint { params: model.params.clone(), adam: adam.clone(), epoch, best_val: valid.total, config: cfg.clone() });
        } else {
            since_best += 1;
        }
        let rec = EpochRecord { epoch, phase, alpha, lr: cfg.lr, train: LossMeans::mean(&epoch_losses), valid, improved };
        on_epoch(&rec);
        log.push(rec);
        if since_best >= cfg.patience {
            stopped_early = true;
            break;
        }
    }
    let best = best.expect("at least one epoch");
    model.params = best.params.clone();
    Ok(TrainOutcome { log, best, stopped_early })
}

/// Trains with `cfg.alpha` until early stopping or `cfg.max_epochs`; leaves
/// `model` holding the best-validation parameters.
pub fn train<M: ItemMapper>(
    cfg: &TrainConfig,
    train_items: &[MixtureItem],
    valid_items: &[MixtureItem],
    model: &mut Model,
    mapper: &M,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    train_phase(cfg, cfg.alpha, 1, 1, model, train_items, valid_items, mapper, on_epoch)
}

/// Phase 1 with `cfg.alpha`, then phase 2 with `cfg.curriculum_alpha` starting
/// from the phase-1 best parameters with fresh optimizer moments.
pub fn curriculum_train<M: ItemMapper>(
    cfg: &TrainConfig,
    train_items: &[MixtureItem],
    valid_items: &[MixtureItem],
    model: &mut Model,
    mapper: &M,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<CurriculumOutcome> {
    let phase1 = train_phase(cfg, cfg.alpha, 1, 1, model, train_items, valid_items, mapper, on_epoch)?;
    let transition_epoch = phase1.log.last().map_or(1, |r| r.epoch + 1);
    let phase2_initial = model.params.clone();
    let phase2 = train_phase(cfg, cfg.curriculum_alpha, 2, transition_epoch, model, train_items, valid_items, mapper, on_epoch)?;
    Ok(CurriculumOutcome { phase1, phase2, transition_epoch, phase2_initial })
}
