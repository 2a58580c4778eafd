//! Waveforms, complex spectrograms, STFT analysis/synthesis and the WAV codec.

mod fft;
mod matrix;
pub mod wav;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

pub use fft::Radix2;
pub use matrix::Matrix;

use crate::error::{Error, Result};

/// Bins whose magnitude falls below this are treated as phase-less.
pub const ZERO_MAGNITUDE: f64 = 1e-12;

/// Mono audio with finite samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn zeros(len: usize, sample_rate_hz: u32) -> Self {
        Self { samples: vec![0.0; len], sample_rate_hz: sample_rate_hz.max(1) }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi n / N)`.
    Hann,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * libm::cos(2.0 * PI * i as f64 / n as f64))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub window: Window,
    /// Reflect-pad `fft_size / 2` samples on both ends so frame `t` is centred on sample `t * hop`.
    pub center: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { fft_size: 256, hop: 64, window: Window::Hann, center: true }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 2 || !self.fft_size.is_power_of_two() {
            return Err(Error::InvalidStftConfig(format!(
                "fft_size {} is not a power of two >= 2",
                self.fft_size
            )));
        }
        if self.hop == 0 || self.fft_size % self.hop != 0 {
            return Err(Error::InvalidStftConfig(format!(
                "hop {} does not divide fft_size {}",
                self.hop, self.fft_size
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count produced by [`stft`] for a signal of `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        let padded = if self.center { len + self.fft_size } else { len };
        if padded < self.fft_size {
            0
        } else {
            1 + (padded - self.fft_size) / self.hop
        }
    }
}

/// `T x F` complex STFT, stored as separate real and imaginary planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub re: Matrix,
    pub im: Matrix,
    pub config: StftConfig,
    pub sample_rate_hz: u32,
}

impl ComplexSpectrogram {
    pub fn new(re: Matrix, im: Matrix, config: StftConfig, sample_rate_hz: u32) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(crate::error::shape_err(
                "spectrogram",
                format!("re {:?} vs im {:?}", re.shape(), im.shape()),
            ));
        }
        if re.cols() != config.bins() {
            return Err(crate::error::shape_err(
                "spectrogram",
                format!("{} bins but fft_size {} needs {}", re.cols(), config.fft_size, config.bins()),
            ));
        }
        Ok(Self { re, im, config, sample_rate_hz })
    }

    pub fn zeros(frames: usize, config: StftConfig, sample_rate_hz: u32) -> Self {
        let f = config.bins();
        Self { re: Matrix::zeros(frames, f), im: Matrix::zeros(frames, f), config, sample_rate_hz }
    }

    /// Builds `mag * (cos, sin)` bin by bin.
    pub fn from_polar(
        mag: &Matrix,
        phase: &PhaseField,
        config: StftConfig,
        sample_rate_hz: u32,
    ) -> Result<Self> {
        if mag.shape() != phase.cos.shape() {
            return Err(crate::error::shape_err(
                "from_polar",
                format!("magnitude {:?} vs phase {:?}", mag.shape(), phase.cos.shape()),
            ));
        }
        let re = mag.zip_map(&phase.cos, |m, c| m * c);
        let im = mag.zip_map(&phase.sin, |m, s| m * s);
        Self::new(re, im, config, sample_rate_hz)
    }

    pub fn frames(&self) -> usize {
        self.re.rows()
    }

    pub fn bins(&self) -> usize {
        self.re.cols()
    }

    /// Frames `[start, start + len)`, zero-filled past the end.
    pub fn slice_frames(&self, start: usize, len: usize) -> Self {
        Self {
            re: self.re.slice_rows_padded(start, len),
            im: self.im.slice_rows_padded(start, len),
            config: self.config,
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.re.shape() != other.re.shape() {
            return Err(crate::error::shape_err(
                "spectrogram add",
                format!("{:?} vs {:?}", self.re.shape(), other.re.shape()),
            ));
        }
        Ok(Self {
            re: self.re.zip_map(&other.re, |a, b| a + b),
            im: self.im.zip_map(&other.im, |a, b| a + b),
            config: self.config,
            sample_rate_hz: self.sample_rate_hz,
        })
    }
}

/// Per-bin unit phasors `(cos theta, sin theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseField {
    pub cos: Matrix,
    pub sin: Matrix,
}

impl PhaseField {
    /// Every bin set to `(1, 0)`.
    pub fn zero_phase(rows: usize, cols: usize) -> Self {
        Self { cos: Matrix::filled(rows, cols, 1.0), sin: Matrix::zeros(rows, cols) }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.cos.shape()
    }

    /// Largest deviation of any bin's norm from one.
    pub fn max_norm_error(&self) -> f64 {
        self.cos
            .data()
            .iter()
            .zip(self.sin.data())
            .map(|(c, s)| (libm::sqrt(c * c + s * s) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        out.push(x[i]);
    }
    out.extend_from_slice(x);
    for i in 0..pad {
        out.push(x[n - 2 - i]);
    }
    out
}

/// Short-time Fourier transform keeping the `fft_size / 2 + 1` non-negative bins.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    let n = cfg.fft_size;
    if w.len() < n {
        return Err(Error::SignalTooShort { len: w.len(), needed: n });
    }
    let padded;
    let signal: &[f64] = if cfg.center {
        padded = reflect_pad(w.samples(), n / 2);
        &padded
    } else {
        w.samples()
    };
    let frames = 1 + (signal.len() - n) / cfg.hop;
    let bins = cfg.bins();
    let window = cfg.window.coefficients(n);
    let fft = Radix2::new(n);
    let mut re = Matrix::zeros(frames, bins);
    let mut im = Matrix::zeros(frames, bins);
    let mut buf_re = vec![0.0; n];
    let mut buf_im = vec![0.0; n];
    for t in 0..frames {
        let frame = &signal[t * cfg.hop..t * cfg.hop + n];
        for i in 0..n {
            buf_re[i] = frame[i] * window[i];
            buf_im[i] = 0.0;
        }
        fft.forward(&mut buf_re, &mut buf_im);
        re.row_mut(t).copy_from_slice(&buf_re[..bins]);
        im.row_mut(t).copy_from_slice(&buf_im[..bins]);
    }
    Ok(ComplexSpectrogram { re, im, config: *cfg, sample_rate_hz: w.sample_rate_hz() })
}

/// Weighted overlap-add inverse, normalized by the summed squared window,
/// trimmed or zero-padded to `target_len` samples.
pub fn istft(s: &ComplexSpectrogram, cfg: &StftConfig, target_len: usize) -> Result<Waveform> {
    cfg.validate()?;
    let n = cfg.fft_size;
    if s.bins() != cfg.bins() {
        return Err(crate::error::shape_err(
            "istft",
            format!("{} bins for fft_size {}", s.bins(), n),
        ));
    }
    let frames = s.frames();
    let window = cfg.window.coefficients(n);
    let fft = Radix2::new(n);
    let span = if frames == 0 { 0 } else { (frames - 1) * cfg.hop + n };
    let mut acc = vec![0.0; span];
    let mut norm = vec![0.0; span];
    let mut buf_re = vec![0.0; n];
    let mut buf_im = vec![0.0; n];
    let half = n / 2;
    for t in 0..frames {
        let (row_re, row_im) = (s.re.row(t), s.im.row(t));
        buf_re[..=half].copy_from_slice(row_re);
        buf_im[..=half].copy_from_slice(row_im);
        buf_im[0] = 0.0;
        buf_im[half] = 0.0;
        for k in 1..half {
            buf_re[n - k] = row_re[k];
            buf_im[n - k] = -row_im[k];
        }
        fft.inverse(&mut buf_re, &mut buf_im);
        let base = t * cfg.hop;
        for i in 0..n {
            acc[base + i] += buf_re[i] / n as f64 * window[i];
            norm[base + i] += window[i] * window[i];
        }
    }
    let offset = if cfg.center { half } else { 0 };
    let mut out = vec![0.0; target_len];
    for (i, y) in out.iter_mut().enumerate() {
        let p = i + offset;
        if p >= span {
            break;
        }
        if norm[p] <= 1e-12 {
            return Err(Error::ColaViolation { sample: i });
        }
        *y = acc[p] / norm[p];
    }
    Waveform::new(out, s.sample_rate_hz)
}

/// `sqrt(re^2 + im^2)` per bin.
pub fn magnitude(s: &ComplexSpectrogram) -> Matrix {
    s.re.zip_map(&s.im, |r, i| libm::sqrt(r * r + i * i))
}

/// Unit phasor per bin; bins below [`ZERO_MAGNITUDE`] take the fallback field's value, or `(1, 0)`.
pub fn phase_field(s: &ComplexSpectrogram, fallback: Option<&PhaseField>) -> PhaseField {
    let (rows, cols) = s.re.shape();
    let mut cos = Matrix::zeros(rows, cols);
    let mut sin = Matrix::zeros(rows, cols);
    for i in 0..rows * cols {
        let (r, im) = (s.re.data()[i], s.im.data()[i]);
        let m = libm::sqrt(r * r + im * im);
        let (c, sn) = if m < ZERO_MAGNITUDE {
            match fallback {
                Some(f) => (f.cos.data()[i], f.sin.data()[i]),
                None => (1.0, 0.0),
            }
        } else {
            (r / m, im / m)
        };
        cos.data_mut()[i] = c;
        sin.data_mut()[i] = sn;
    }
    PhaseField { cos, sin }
}
