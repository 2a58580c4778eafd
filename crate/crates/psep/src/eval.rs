//! Separation pipelines for evaluation: model or oracle masks, estimated,
//! noisy or true phase, optionally followed by MISI.

use anyhow::{bail, Context};
use psep_core::datagen::MixtureItem;
use psep_core::dsp::{istft, magnitude, phase_field, stft, Matrix, PhaseField, StftConfig, Waveform};
use psep_core::metrics::{eval_separation, EvalResult};
use psep_core::model::{reconstruct, Model};
use psep_core::phase_recon::{misi, MisiConfig};
use psep_core::targets::{ideal_masks, truncate_scalar, MaskKind};
use psep_core::trainer::ItemMapper;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSource {
    Model,
    Irm,
    /// Phase-sensitive mask truncated to `[0, 1]`.
    Psm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseSource {
    /// The model's phase network (noisy phase for mask-only models or oracle masks).
    Estimated,
    Noisy,
    True,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pipeline {
    pub masks: MaskSource,
    pub phase: PhaseSource,
    /// Replace the phase stage with this many MISI iterations.
    pub misi: Option<usize>,
}

impl Pipeline {
    pub fn label(&self) -> String {
        let m = match self.masks {
            MaskSource::Model => "model",
            MaskSource::Irm => "irm",
            MaskSource::Psm => "psm",
        };
        match self.misi {
            Some(k) => format!("{m}+misi{k}"),
            None => {
                let p = match self.phase {
                    PhaseSource::Estimated => "estimated",
                    PhaseSource::Noisy => "noisy",
                    PhaseSource::True => "true",
                };
                format!("{m}+{p}")
            }
        }
    }
}

/// Source estimates for one item.
pub fn separate_item(model: Option<&Model>, item: &MixtureItem, stft_cfg: &StftConfig, p: &Pipeline) -> anyhow::Result<Vec<Waveform>> {
    if p.phase == PhaseSource::True && p.masks == MaskSource::Model && p.misi.is_none() {
        bail!("true phase needs oracle masks: model outputs are not aligned with reference order");
    }
    let x = stft(&item.mixture, stft_cfg)?;
    let len = item.mixture.len();
    let refs = || item.sources.iter().map(|s| stft(s, stft_cfg)).collect::<Result<Vec<_>, _>>();
    let mut estimated_phase: Option<Vec<PhaseField>> = None;
    let masks: Vec<Matrix> = match p.masks {
        MaskSource::Model => {
            let m = model.context("model masks need a checkpoint")?;
            let out = m.infer(&x)?;
            if m.config.phase_net {
                estimated_phase = Some(out.phases);
            }
            out.masks.into_iter().map(|m| m.values).collect()
        }
        MaskSource::Irm => ideal_masks(&refs()?, &x, MaskKind::Irm)?.into_iter().map(|m| m.values).collect(),
        MaskSource::Psm => ideal_masks(&refs()?, &x, MaskKind::Psm)?
            .into_iter()
            .map(|m| m.values.map(|v| truncate_scalar(v, 0.0, 1.0)))
            .collect(),
    };
    if let Some(k) = p.misi {
        let mix_mag = magnitude(&x);
        let mags: Vec<Matrix> = masks.iter().map(|m| m.zip_map(&mix_mag, |a, b| a * b)).collect();
        return Ok(misi(&mags, &item.mixture, &MisiConfig { iterations: k, stft: *stft_cfg })?);
    }
    let phases: Vec<PhaseField> = match (p.phase, estimated_phase) {
        (PhaseSource::True, _) => refs()?.iter().map(|s| phase_field(s, None)).collect(),
        (PhaseSource::Estimated, Some(est)) => est,
        _ => vec![phase_field(&x, None); masks.len()],
    };
    masks
        .iter()
        .zip(&phases)
        .map(|(m, ph)| Ok(istft(&reconstruct(&x, m, ph)?, stft_cfg, len)?))
        .collect()
}

/// One JSON-lines row.
#[derive(Debug, Clone, Serialize)]
pub struct EvalRow {
    pub id: String,
    pub method: String,
    pub per_source_si_sdr: Vec<f64>,
    pub mean_si_sdr: f64,
    pub si_sdr_improvement: f64,
    pub perm: Vec<usize>,
}

impl EvalRow {
    fn new(id: &str, method: &str, r: &EvalResult) -> Self {
        Self {
            id: id.to_string(),
            method: method.to_string(),
            per_source_si_sdr: r.per_source_si_sdr.clone(),
            mean_si_sdr: r.mean_si_sdr,
            si_sdr_improvement: r.si_sdr_improvement,
            perm: r.chosen_perm.as_slice().to_vec(),
        }
    }
}

pub fn evaluate_items<M: ItemMapper>(
    model: Option<&Model>,
    items: &[MixtureItem],
    stft_cfg: &StftConfig,
    p: &Pipeline,
    mapper: &M,
) -> anyhow::Result<Vec<EvalRow>> {
    let label = p.label();
    let rows = mapper.map(items.len(), |i| -> anyhow::Result<EvalRow> {
        let it = &items[i];
        let est = separate_item(model, it, stft_cfg, p).with_context(|| format!("item {}", it.id))?;
        Ok(EvalRow::new(&it.id, &label, &eval_separation(&est, &it.sources, &it.mixture)?))
    });
    rows.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean_si_sdr: f64,
    pub mean_improvement: f64,
    pub median_improvement: f64,
}

pub fn summarize(rows: &[EvalRow]) -> Summary {
    let n = rows.len().max(1) as f64;
    let mut imp: Vec<f64> = rows.iter().map(|r| r.si_sdr_improvement).collect();
    imp.sort_by(f64::total_cmp);
    let median = match imp.len() {
        0 => 0.0,
        k if k % 2 == 1 => imp[k / 2],
        k => 0.5 * (imp[k / 2 - 1] + imp[k / 2]),
    };
    Summary {
        count: rows.len(),
        mean_si_sdr: rows.iter().map(|r| r.mean_si_sdr).sum::<f64>() / n,
        mean_improvement: rows.iter().map(|r| r.si_sdr_improvement).sum::<f64>() / n,
        median_improvement: median,
    }
}

pub fn to_jsonl(rows: &[EvalRow]) -> String {
    rows.iter().map(|r| serde_json::to_string(r).expect("row serializes") + "\n").collect()
}

pub fn to_csv(rows: &[EvalRow]) -> String {
    let c = rows.first().map_or(0, |r| r.per_source_si_sdr.len());
    let mut out = String::from("id,method");
    for k in 0..c {
        out.push_str(&format!(",si_sdr_s{}", k + 1));
    }
    out.push_str(",mean_si_sdr,si_sdr_improvement,perm\n");
    for r in rows {
        out.push_str(&format!("{},{}", r.id, r.method));
        for v in &r.per_source_si_sdr {
            out.push_str(&format!(",{v:.4}"));
        }
        let perm: Vec<String> = r.perm.iter().map(|p| p.to_string()).collect();
        out.push_str(&format!(",{:.4},{:.4},{}\n", r.mean_si_sdr, r.si_sdr_improvement, perm.join(" ")));
    }
    out
}
