//! Byte-level codec for 16-bit PCM mono RIFF/WAVE.

use alloc::format;
use alloc::vec::Vec;

use super::Waveform;
use crate::error::{Error, Result};

const SCALE: f64 = 32768.0;

/// Decodes a 16-bit little-endian PCM mono WAV; samples are scaled by `1/32768`.
pub fn decode(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Wav("not a RIFF/WAVE file".into()));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes([bytes[pos + 4], bytes[pos + 5], bytes[pos + 6], bytes[pos + 7]])
            as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Wav(format!("truncated chunk {:?}", id)))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::Wav("fmt chunk too short".into()));
                }
                let u16_at = |i: usize| u16::from_le_bytes([body[i], body[i + 1]]);
                let rate = u32::from_le_bytes([body[4], body[5], body[6], body[7]]);
                format = Some((u16_at(0), u16_at(2), rate, u16_at(14)));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (size & 1);
    }
    let (audio_format, channels, rate, bits) =
        format.ok_or_else(|| Error::Wav("missing fmt chunk".into()))?;
    if audio_format != 1 {
        return Err(Error::Wav(format!("PCM required, found format tag {audio_format}")));
    }
    if channels != 1 {
        return Err(Error::Wav(format!("mono required, found {channels} channels")));
    }
    if bits != 16 {
        return Err(Error::Wav(format!("16-bit samples required, found {bits}-bit")));
    }
    let data = data.ok_or_else(|| Error::Wav("missing data chunk".into()))?;
    let samples = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / SCALE)
        .collect();
    Waveform::new(samples, rate)
}

/// Quantizes to 16-bit with rounding and saturation.
pub fn quantize(x: f64) -> i16 {
    let v = libm::round(x * SCALE);
    v.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn encode(w: &Waveform) -> Vec<u8> {
    let n = w.len();
    let data_len = (2 * n) as u32;
    let rate = w.sample_rate_hz();
    let mut out = Vec::with_capacity(44 + 2 * n);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &x in w.samples() {
        out.extend_from_slice(&quantize(x).to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn zero_encodes_to_zero_bytes() {
        let bytes = encode(&Waveform::new(vec![0.0], 8000).unwrap());
        assert_eq!(&bytes[44..46], &[0x00, 0x00]);
        assert_eq!(bytes.len(), 46);
    }

    #[test]
    fn saturates_out_of_range() {
        assert_eq!(quantize(1.5), i16::MAX);
        assert_eq!(quantize(-1.5), i16::MIN);
        assert_eq!(quantize(-1.0), i16::MIN);
    }

    #[test]
    fn rejects_stereo() {
        let mut bytes = encode(&Waveform::new(vec![0.1, 0.2], 8000).unwrap());
        bytes[22] = 2;
        let err = decode(&bytes).unwrap_err();
        assert!(format!("{err}").contains("mono required"));
    }

    #[test]
    fn rejects_non_wav_and_other_depths() {
        assert!(decode(b"not a wav file at all").is_err());
        let mut bytes = encode(&Waveform::new(vec![0.1], 8000).unwrap());
        bytes[34] = 8;
        assert!(format!("{}", decode(&bytes).unwrap_err()).contains("16-bit"));
    }

    #[test]
    fn keeps_sample_rate() {
        let w = Waveform::new(vec![0.25; 10], 16000).unwrap();
        assert_eq!(decode(&encode(&w)).unwrap().sample_rate_hz(), 16000);
    }

    proptest! {
        #[test]
        fn round_trip_within_quantization(xs in proptest::collection::vec(-1.0f64..1.0, 1..500)) {
            let w = Waveform::new(xs.clone(), 8000).unwrap();
            let back = decode(&encode(&w)).unwrap();
            prop_assert_eq!(back.len(), xs.len());
            for (a, b) in back.samples().iter().zip(&xs) {
                prop_assert!((a - b).abs() <= 1.0 / 32768.0);
            }
        }
    }
}
