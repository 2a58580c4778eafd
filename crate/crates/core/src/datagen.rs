//! Synthetic two-talker corpus: speech-like harmonic sources, SNR-controlled
//! mixing, and per-epoch chunk/batch planning.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, Rng};

/// Peak amplitude of a synthesized utterance.
pub const SPEAKER_PEAK: f64 = 0.9;
/// Mixtures whose peak exceeds this are rescaled together with their sources.
pub const CLIP_LEVEL: f64 = 0.99;

/// Voice parameters: pitch base and a resonance layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub f0_hz: f64,
    /// `(centre Hz, bandwidth Hz)` per resonator, 2 or 3 of them.
    pub formants: Vec<(f64, f64)>,
    /// Harmonic amplitude rolloff exponent (`1 / k^rolloff`).
    pub rolloff: f64,
    pub syllable_rate_hz: f64,
}

impl SpeakerProfile {
    /// A low-pitched voice with low resonances.
    pub fn low() -> Self {
        Self { f0_hz: 100.0, formants: vec![(450.0, 90.0), (1100.0, 120.0), (2300.0, 180.0)], rolloff: 1.2, syllable_rate_hz: 4.0 }
    }

    /// A high-pitched voice with high resonances.
    pub fn high() -> Self {
        Self { f0_hz: 240.0, formants: vec![(850.0, 100.0), (2100.0, 150.0), (3200.0, 200.0)], rolloff: 0.9, syllable_rate_hz: 5.0 }
    }

    pub fn random(rng: &mut Rng) -> Self {
        let f0_hz = rng.gen_range(90.0..260.0);
        // vocal-tract length scale, loosely tied to pitch
        let tract = 0.8 + 0.4 * (f0_hz - 90.0) / 170.0 + rng.gen_range(-0.1..0.1);
        let bases = [550.0, 1500.0, 2600.0];
        let count = if rng.gen_bool(0.5) { 2 } else { 3 };
        let formants = bases[..count]
            .iter()
            .map(|&b| (b * tract * rng.gen_range(0.85..1.15), rng.gen_range(80.0..200.0)))
            .collect();
        Self { f0_hz, formants, rolloff: rng.gen_range(0.8..1.4), syllable_rate_hz: rng.gen_range(3.0..6.0) }
    }
}

struct Segment {
    len: usize,
    voiced: bool,
    f0_start: f64,
    f0_end: f64,
    /// Per-formant relative centre shift at segment start and end.
    shift: (f64, f64),
}

/// A speech-like utterance: gliding-pitch harmonic source through drifting
/// resonators under a syllabic on/off envelope, peak-normalized.
pub fn synth_speaker(seed: u64, duration_s: f64, sample_rate_hz: u32, profile: &SpeakerProfile) -> Result<Waveform> {
    if !(duration_s >= 0.5) {
        return Err(Error::InvalidArgument(format!("duration {duration_s} s is below 0.5 s")));
    }
    if sample_rate_hz == 0 {
        return Err(Error::InvalidArgument("sample rate must be positive".into()));
    }
    let sr = sample_rate_hz as f64;
    let n = libm::round(duration_s * sr) as usize;
    let mut rng = seeded(seed);

    let mut segments = Vec::new();
    let mut total = 0;
    let mut f0 = profile.f0_hz * rng.gen_range(0.9..1.1);
    let mut shift = 0.0;
    while total < n {
        let voiced = segments.is_empty() || rng.gen_bool(0.8);
        let dur = if voiced { rng.gen_range(0.6..1.4) / profile.syllable_rate_hz } else { rng.gen_range(0.04..0.15) };
        let len = ((dur * sr) as usize).max(1).min(n - total);
        let f0_end = (profile.f0_hz * rng.gen_range(0.8..1.2)).clamp(60.0, 400.0);
        let shift_end = rng.gen_range(-0.1..0.1);
        segments.push(Segment { len, voiced, f0_start: f0, f0_end, shift: (shift, shift_end) });
        f0 = f0_end;
        shift = shift_end;
        total += len;
    }

    let ramp = ((0.02 * sr) as usize).max(1);
    let mut source = vec![0.0; n];
    let mut envelope = vec![0.0; n];
    let mut formant_shift = vec![0.0; n];
    let mut pos = 0;
    let mut phase: f64 = 0.0;
    let vibrato_rate = rng.gen_range(4.0..6.0);
    let cutoff = 0.45 * sr;
    for seg in &segments {
        for k in 0..seg.len {
            let i = pos + k;
            let u = k as f64 / seg.len as f64;
            formant_shift[i] = seg.shift.0 + (seg.shift.1 - seg.shift.0) * u;
            if !seg.voiced {
                continue;
            }
            let edge = k.min(seg.len - 1 - k) as f64 / ramp as f64;
            envelope[i] = if edge >= 1.0 { 1.0 } else { 0.5 - 0.5 * libm::cos(PI * edge) };
            let vib = 1.0 + 0.01 * libm::sin(TAU * vibrato_rate * i as f64 / sr);
            let f = (seg.f0_start + (seg.f0_end - seg.f0_start) * u) * vib;
            phase = (phase + TAU * f / sr) % TAU;
            // sin(k phi) by the Chebyshev recurrence
            let (c, s1) = (libm::cos(phase), libm::sin(phase));
            let (mut prev, mut cur) = (0.0, s1);
            let mut acc = 0.0;
            let mut h = 1;
            while h as f64 * f < cutoff {
                acc += cur / libm::pow(h as f64, profile.rolloff);
                let next = 2.0 * c * cur - prev;
                prev = cur;
                cur = next;
                h += 1;
            }
            source[i] = acc + 0.05 * rng.gen_range(-1.0..1.0);
        }
        pos += seg.len;
    }

    let mut x: Vec<f64> = source.iter().zip(&envelope).map(|(s, e)| s * e).collect();
    for &(fc, bw) in &profile.formants {
        let r = libm::exp(-PI * bw / sr);
        let (mut y1, mut y2) = (0.0, 0.0);
        for (i, v) in x.iter_mut().enumerate() {
            let w = TAU * (fc * (1.0 + formant_shift[i])).min(cutoff) / sr;
            let y = (1.0 - r) * *v + 2.0 * r * libm::cos(w) * y1 - r * r * y2;
            y2 = y1;
            y1 = y;
            *v = y;
        }
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= SPEAKER_PEAK / peak);
    }
    Waveform::new(x, sample_rate_hz)
}

/// One mixture and its references; `mixture` is the sample-wise sum of `sources`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureItem {
    pub id: String,
    pub mixture: Waveform,
    pub sources: Vec<Waveform>,
    pub snr_db: f64,
    pub seed: u64,
}

impl MixtureItem {
    /// Builds an item whose mixture is recomputed as the sum of `sources`.
    pub fn from_sources(id: String, sources: Vec<Waveform>, snr_db: f64, seed: u64) -> Result<Self> {
        let first = sources.first().ok_or_else(|| Error::InvalidArgument("mixture needs sources".into()))?;
        let (len, sr) = (first.len(), first.sample_rate_hz());
        if let Some(s) = sources.iter().find(|s| s.len() != len || s.sample_rate_hz() != sr) {
            return Err(Error::InvalidArgument(format!(
                "source of {} samples at {} Hz vs {} samples at {} Hz",
                s.len(),
                s.sample_rate_hz(),
                len,
                sr
            )));
        }
        let mut mix = vec![0.0; len];
        for s in &sources {
            mix.iter_mut().zip(s.samples()).for_each(|(m, v)| *m += v);
        }
        Ok(Self { id, mixture: Waveform::new(mix, sr)?, sources, snr_db, seed })
    }
}

fn power(w: &Waveform) -> f64 {
    w.energy() / w.len().max(1) as f64
}

/// Scales `s2` so that `10 log10(P1 / P2') = snr_db`, sums, and rescales
/// everything jointly if the mixture would clip.
pub fn make_mixture(s1: &Waveform, s2: &Waveform, snr_db: f64) -> Result<MixtureItem> {
    if s1.len() != s2.len() {
        return Err(Error::InvalidArgument(format!("sources of {} and {} samples", s1.len(), s2.len())));
    }
    let (p1, p2) = (power(s1), power(s2));
    if p1 == 0.0 || p2 == 0.0 {
        return Err(Error::InvalidArgument("zero-power source".into()));
    }
    let g = libm::sqrt(p1 / (p2 * libm::pow(10.0, snr_db / 10.0)));
    let mut a = s1.samples().to_vec();
    let mut b: Vec<f64> = s2.samples().iter().map(|v| v * g).collect();
    let peak = a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x + y).abs()));
    if peak > CLIP_LEVEL {
        let k = CLIP_LEVEL / peak;
        a.iter_mut().for_each(|v| *v *= k);
        b.iter_mut().for_each(|v| *v *= k);
    }
    let sr = s1.sample_rate_hz();
    MixtureItem::from_sources(String::new(), vec![Waveform::new(a, sr)?, Waveform::new(b, sr)?], snr_db, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    /// Split named by an item id prefix such as `train-0003`.
    pub fn of_id(id: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|s| id.strip_prefix(s.as_str()).is_some_and(|r| r.starts_with('-')))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub snr_range_db: (f64, f64),
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self { n_train: 500, n_valid: 50, n_test: 50, duration_s: 2.0, sample_rate_hz: 8000, snr_range_db: (0.0, 10.0), seed: 0 }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_valid == 0 || self.n_test == 0 {
            return Err(Error::InvalidArgument("corpus split counts must be at least 1".into()));
        }
        if !(self.snr_range_db.0 <= self.snr_range_db.1) {
            return Err(Error::InvalidArgument(format!("SNR range {:?} is inverted", self.snr_range_db)));
        }
        if !(self.duration_s >= 0.5) || self.sample_rate_hz == 0 {
            return Err(Error::InvalidArgument("duration must be at least 0.5 s and sample rate positive".into()));
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Valid => self.n_valid,
            Split::Test => self.n_test,
        }
    }

    /// `(split, index)` for every item in generation order.
    pub fn items(&self) -> Vec<(Split, usize)> {
        Split::ALL.into_iter().flat_map(|s| (0..self.count(s)).map(move |i| (s, i))).collect()
    }
}

pub fn item_id(split: Split, index: usize) -> String {
    format!("{}-{:04}", split.as_str(), index)
}

/// Generates one corpus item; depends only on `(spec, split, index)`.
pub fn generate_item(spec: &CorpusSpec, split: Split, index: usize) -> Result<MixtureItem> {
    let stream = match split {
        Split::Train => 0,
        Split::Valid => 1,
        Split::Test => 2,
    };
    let seed = derive_seed(derive_seed(spec.seed, stream), index as u64);
    let mut rng = seeded(seed);
    let p1 = SpeakerProfile::random(&mut rng);
    let mut p2 = SpeakerProfile::random(&mut rng);
    while (p2.f0_hz - p1.f0_hz).abs() < 15.0 {
        p2 = SpeakerProfile::random(&mut rng);
    }
    let (lo, hi) = spec.snr_range_db;
    let snr = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let s1 = synth_speaker(rng.gen(), spec.duration_s, spec.sample_rate_hz, &p1)?;
    let s2 = synth_speaker(rng.gen(), spec.duration_s, spec.sample_rate_hz, &p2)?;
    let mut item = make_mixture(&s1, &s2, snr)?;
    item.id = item_id(split, index);
    item.seed = seed;
    Ok(item)
}

/// A window of `frames` consecutive STFT frames of item `item`; the first
/// `valid` are real, the rest zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk {
    pub item: usize,
    pub start: usize,
    pub frames: usize,
    pub valid: usize,
}

/// One epoch's batches over items with the given frame counts: seeded shuffle,
/// one uniformly placed chunk per item, last partial batch kept.
pub fn batch_iter(item_frames: &[usize], chunk_frames: usize, batch: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<Chunk>>> {
    if item_frames.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if chunk_frames == 0 || batch == 0 {
        return Err(Error::InvalidArgument("chunk length and batch size must be positive".into()));
    }
    if let Some(i) = item_frames.iter().position(|&f| f == 0) {
        return Err(Error::InvalidArgument(format!("item {i} has no frames")));
    }
    let mut rng = seeded(derive_seed(seed, epoch as u64));
    let mut order: Vec<usize> = (0..item_frames.len()).collect();
    order.shuffle(&mut rng);
    let chunks: Vec<Chunk> = order
        .into_iter()
        .map(|item| {
            let f = item_frames[item];
            if f >= chunk_frames {
                Chunk { item, start: rng.gen_range(0..=f - chunk_frames), frames: chunk_frames, valid: chunk_frames }
            } else {
                Chunk { item, start: 0, frames: chunk_frames, valid: f }
            }
        })
        .collect();
    Ok(chunks.chunks(batch).map(|b| b.to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{magnitude, stft, StftConfig};

    fn centroid(w: &Waveform) -> f64 {
        let s = stft(w, &StftConfig::default()).unwrap();
        let m = magnitude(&s);
        let (mut num, mut den) = (0.0, 0.0);
        for t in 0..m.rows() {
            for f in 0..m.cols() {
                let p = m.get(t, f) * m.get(t, f);
                num += p * f as f64;
                den += p;
            }
        }
        num / den * 8000.0 / 256.0
    }

    #[test]
    fn deterministic_and_bounded() {
        let p = SpeakerProfile::low();
        let a = synth_speaker(5, 1.0, 8000, &p).unwrap();
        let b = synth_speaker(5, 1.0, 8000, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8000);
        assert!(a.peak() <= 0.99);
        assert_ne!(a, synth_speaker(6, 1.0, 8000, &p).unwrap());
        assert!(synth_speaker(5, 0.4, 8000, &p).is_err());
    }

    #[test]
    fn profiles_have_distinct_centroids() {
        let (mut lo, mut hi) = (0.0, 0.0);
        for seed in 0..5 {
            lo += centroid(&synth_speaker(seed, 2.0, 8000, &SpeakerProfile::low()).unwrap());
            hi += centroid(&synth_speaker(seed, 2.0, 8000, &SpeakerProfile::high()).unwrap());
        }
        assert!(hi > 1.1 * lo, "low {lo} high {hi}");
    }

    #[test]
    fn utterances_have_silences() {
        let w = synth_speaker(9, 2.0, 8000, &SpeakerProfile::high()).unwrap();
        let quiet = w.samples().chunks(400).filter(|c| c.iter().all(|v| v.abs() < 0.05)).count();
        let loud = w.samples().chunks(400).filter(|c| c.iter().any(|v| v.abs() > 0.2)).count();
        assert!(loud > 10 && quiet >= 1, "loud {loud} quiet {quiet}");
    }

    #[test]
    fn mixing_examples() {
        let s1 = synth_speaker(1, 1.0, 8000, &SpeakerProfile::low()).unwrap();
        let s2 = synth_speaker(2, 1.0, 8000, &SpeakerProfile::high()).unwrap();
        for snr in [0.0, 10.0, 3.7] {
            let m = make_mixture(&s1, &s2, snr).unwrap();
            let ratio = power(&m.sources[0]) / power(&m.sources[1]);
            let want = 10f64.powf(snr / 10.0);
            assert!((ratio - want).abs() <= 1e-10 * want);
            for i in 0..m.mixture.len() {
                assert_eq!(m.mixture.samples()[i], m.sources[0].samples()[i] + m.sources[1].samples()[i]);
            }
            assert!(m.mixture.peak() <= CLIP_LEVEL + 1e-12);
        }
        assert!(make_mixture(&s1, &Waveform::zeros(8000, 8000), 0.0).is_err());
        assert!(make_mixture(&s1, &Waveform::zeros(10, 8000), 0.0).is_err());
    }

    #[test]
    fn corpus_items_reproducible() {
        let spec = CorpusSpec { n_train: 2, n_valid: 1, n_test: 1, duration_s: 0.5, seed: 3, ..Default::default() };
        let a = generate_item(&spec, Split::Valid, 0).unwrap();
        assert_eq!(a, generate_item(&spec, Split::Valid, 0).unwrap());
        assert_eq!(a.id, "valid-0000");
        assert_ne!(a.mixture, generate_item(&spec, Split::Train, 0).unwrap().mixture);
        assert!((0.0..10.0).contains(&a.snr_db));
        assert_eq!(spec.items().len(), 4);
        assert_eq!(Split::of_id("test-0012"), Some(Split::Test));
        assert_eq!(Split::of_id("testing"), None);
        assert!(CorpusSpec { snr_range_db: (5.0, 1.0), ..spec.clone() }.validate().is_err());
    }

    #[test]
    fn batching_examples() {
        let frames = vec![251; 32];
        let b = batch_iter(&frames, 100, 16, 1, 0).unwrap();
        assert_eq!(b.len(), 2);
        assert!(b.iter().flatten().all(|c| c.frames == 100 && c.valid == 100 && c.start + 100 <= 251));
        assert_eq!(b, batch_iter(&frames, 100, 16, 1, 0).unwrap());
        assert_ne!(b, batch_iter(&frames, 100, 16, 1, 1).unwrap());
        let mut seen: Vec<usize> = b.iter().flatten().map(|c| c.item).collect();
        seen.sort();
        assert_eq!(seen, (0..32).collect::<Vec<_>>());

        let b = batch_iter(&[50, 500, 400], 400, 2, 2, 0).unwrap();
        assert_eq!(b.len(), 2);
        let short = b.iter().flatten().find(|c| c.item == 0).unwrap();
        assert_eq!((short.frames, short.valid, short.start), (400, 50, 0));
        assert!(matches!(batch_iter(&[], 400, 16, 0, 0), Err(Error::EmptyCorpus)));
    }
}
