use psep_core::datagen::{generate_item, CorpusSpec, Split};
use psep_core::dsp::{istft, stft, wav, ComplexSpectrogram, StftConfig};
use psep_core::metrics::eval_separation;
use psep_core::model::{Model, ModelConfig};
use psep_core::targets::{ideal_masks, MaskKind};
use psep_core::trainer::Checkpoint;

fn item() -> psep_core::datagen::MixtureItem {
    let spec = CorpusSpec { n_test: 1, ..CorpusSpec::default() };
    generate_item(&spec, Split::Test, 0).unwrap()
}

#[test]
fn oracle_mask_resynthesis_beats_mixture() {
    let it = item();
    let cfg = StftConfig::default();
    let x = stft(&it.mixture, &cfg).unwrap();
    let s: Vec<ComplexSpectrogram> = it.sources.iter().map(|w| stft(w, &cfg).unwrap()).collect();
    let est: Vec<_> = ideal_masks(&s, &x, MaskKind::Irm)
        .unwrap()
        .iter()
        .map(|m| {
            let y = ComplexSpectrogram { re: x.re.zip_map(&m.values, |a, b| a * b), im: x.im.zip_map(&m.values, |a, b| a * b), ..x.clone() };
            istft(&y, &cfg, it.mixture.len()).unwrap()
        })
        .collect();
    let r = eval_separation(&est, &it.sources, &it.mixture).unwrap();
    assert!(r.si_sdr_improvement > 5.0, "{r:?}");
}

#[test]
fn wav_codec_round_trips_quantized_audio() {
    let it = item();
    let once = wav::decode(&wav::encode(&it.mixture)).unwrap();
    let twice = wav::decode(&wav::encode(&once)).unwrap();
    assert_eq!(once, twice);
    assert_eq!(once.len(), it.mixture.len());
    let err = once.samples().iter().zip(it.mixture.samples()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= 1.0 / 32768.0, "{err}");
}

#[test]
fn untrained_model_separates_to_mixture_length() {
    let it = item();
    let cfg = StftConfig::default();
    let mut mc = ModelConfig::desk(cfg.bins());
    mc.hidden = 8;
    mc.phase_hidden = 8;
    let model = Model::new(mc, 3).unwrap();
    let out = model.separate(&it.mixture, &cfg).unwrap();
    assert_eq!(out.len(), 2);
    assert!(out.iter().all(|w| w.len() == it.mixture.len() && w.samples().iter().all(|v| v.is_finite())));
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    assert!(Checkpoint::decode(b"").is_err());
    assert!(Checkpoint::decode(b"NOPE\x01\x00\x00\x00").is_err());
}
