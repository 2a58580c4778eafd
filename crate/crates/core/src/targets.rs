//! Oracle training targets computed from reference sources and the mixture.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dsp::{magnitude, ComplexSpectrogram, Matrix};
use crate::error::{shape_err, Error, Result};

/// Floor applied to mask denominators.
pub const MASK_EPS: f64 = 1e-8;

/// Default voice-activity threshold below the loudest bin.
pub const DEFAULT_VA_THRESHOLD_DB: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Ibm,
    Irm,
    Psm,
    Estimated,
}

/// Real-valued time-frequency gain.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub values: Matrix,
    pub kind: MaskKind,
}

/// One-hot dominant-source labels, `(T*F) x C`, row-major over `(t, f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    pub values: Matrix,
}

impl LabelMatrix {
    pub fn sources(&self) -> usize {
        self.values.cols()
    }

    /// Index of the dominant source of bin `i`.
    pub fn label(&self, i: usize) -> usize {
        self.values.row(i).iter().position(|&v| v == 1.0).unwrap_or(0)
    }
}

/// Binary voice-activity weights per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct VaWeights {
    pub values: Matrix,
}

impl VaWeights {
    pub fn ones(rows: usize, cols: usize) -> Self {
        Self { values: Matrix::filled(rows, cols, 1.0) }
    }
}

fn check_sources(sources: &[ComplexSpectrogram], mixture: Option<&ComplexSpectrogram>) -> Result<()> {
    if sources.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 sources, got {}", sources.len())));
    }
    let shape = mixture.map(|m| m.re.shape()).unwrap_or(sources[0].re.shape());
    for (c, s) in sources.iter().enumerate() {
        if s.re.shape() != shape {
            return Err(shape_err("targets", format!("source {c} {:?} vs {:?}", s.re.shape(), shape)));
        }
    }
    Ok(())
}

/// Oracle masks of the requested kind, one per source.
///
/// * IRM: `|S_c| / max(sum_i |S_i|, eps)`
/// * PSM: `Re(S_c conj(X)) / max(|X|^2, eps)`, i.e. `|S_c|/|X| cos(angle S_c - angle X)`
/// * IBM: 1 where source `c` has the largest magnitude (ties to the lower index)
pub fn ideal_masks(
    sources: &[ComplexSpectrogram],
    mixture: &ComplexSpectrogram,
    kind: MaskKind,
) -> Result<Vec<Mask>> {
    check_sources(sources, Some(mixture))?;
    let mags: Vec<Matrix> = sources.iter().map(magnitude).collect();
    let masks: Vec<Matrix> = match kind {
        MaskKind::Irm => {
            let mut total = Matrix::zeros(mixture.frames(), mixture.bins());
            for m in &mags {
                total = total.zip_map(m, |a, b| a + b);
            }
            mags.iter().map(|m| m.zip_map(&total, |a, t| a / t.max(MASK_EPS))).collect()
        }
        MaskKind::Psm => sources
            .iter()
            .map(|s| {
                let n = mixture.re.data().len();
                let mut out = Matrix::zeros(mixture.frames(), mixture.bins());
                for i in 0..n {
                    let (xr, xi) = (mixture.re.data()[i], mixture.im.data()[i]);
                    let (sr, si) = (s.re.data()[i], s.im.data()[i]);
                    out.data_mut()[i] = (sr * xr + si * xi) / (xr * xr + xi * xi).max(MASK_EPS);
                }
                out
            })
            .collect(),
        MaskKind::Ibm => {
            let labels = argmax_sources(&mags);
            (0..sources.len())
                .map(|c| labels.map(|l| if l as usize == c { 1.0 } else { 0.0 }))
                .collect()
        }
        MaskKind::Estimated => {
            return Err(Error::InvalidArgument("estimated masks come from a model".into()))
        }
    };
    Ok(masks.into_iter().map(|values| Mask { values, kind }).collect())
}

/// Per-bin index of the loudest source, stored as f64 in a matrix.
fn argmax_sources(mags: &[Matrix]) -> Matrix {
    let (rows, cols) = mags[0].shape();
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..rows * cols {
        let mut best = 0;
        for (c, m) in mags.iter().enumerate().skip(1) {
            if m.data()[i] > mags[best].data()[i] {
                best = c;
            }
        }
        out.data_mut()[i] = best as f64;
    }
    out
}

/// Lower/upper bound for [`truncate`].
#[derive(Debug, Clone, Copy)]
pub enum Bound<'a> {
    Scalar(f64),
    Matrix(&'a Matrix),
}

impl Bound<'_> {
    fn at(&self, i: usize) -> f64 {
        match self {
            Bound::Scalar(v) => *v,
            Bound::Matrix(m) => m.data()[i],
        }
    }
}

/// Elementwise `min(max(x, lo), hi)`.
pub fn truncate(x: &Matrix, lo: Bound<'_>, hi: Bound<'_>) -> Result<Matrix> {
    for b in [lo, hi] {
        if let Bound::Matrix(m) = b {
            if m.shape() != x.shape() {
                return Err(shape_err("truncate", format!("bound {:?} vs {:?}", m.shape(), x.shape())));
            }
        }
    }
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let (a, b) = (lo.at(i), hi.at(i));
        if a > b {
            return Err(Error::InvalidArgument(format!("truncate bound lo {a} > hi {b} at {i}")));
        }
        *v = v.max(a).min(b);
    }
    Ok(out)
}

/// Scalar form of [`truncate`].
pub fn truncate_scalar(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

/// One-hot labels of the loudest source per bin, ties to the lowest index.
pub fn dominance_labels(sources: &[ComplexSpectrogram]) -> Result<LabelMatrix> {
    check_sources(sources, None)?;
    let mags: Vec<Matrix> = sources.iter().map(magnitude).collect();
    Ok(labels_from_magnitudes(&mags))
}

pub fn labels_from_magnitudes(mags: &[Matrix]) -> LabelMatrix {
    let idx = argmax_sources(mags);
    let c = mags.len();
    let mut values = Matrix::zeros(idx.data().len(), c);
    for (i, &l) in idx.data().iter().enumerate() {
        values.set(i, l as usize, 1.0);
    }
    LabelMatrix { values }
}

/// Marks bins within `threshold_db` of the loudest mixture bin as active.
pub fn va_weights(mixture: &ComplexSpectrogram, threshold_db: f64) -> Result<VaWeights> {
    va_weights_from_magnitude(&magnitude(mixture), threshold_db)
}

pub fn va_weights_from_magnitude(mag: &Matrix, threshold_db: f64) -> Result<VaWeights> {
    if !(threshold_db > 0.0) {
        return Err(Error::InvalidArgument(format!("VA threshold must be positive, got {threshold_db}")));
    }
    let peak = mag.max();
    if !(peak > 0.0) {
        return Ok(VaWeights { values: Matrix::zeros(mag.rows(), mag.cols()) });
    }
    let floor = 20.0 * libm::log10(peak) - threshold_db;
    let values = mag.map(|m| if m > 0.0 && 20.0 * libm::log10(m) > floor { 1.0 } else { 0.0 });
    Ok(VaWeights { values })
}

/// Per-bin `cos(angle S - angle X)`; zero where either magnitude vanishes.
pub fn phase_difference_cos(source: &ComplexSpectrogram, mixture: &ComplexSpectrogram) -> Matrix {
    let n = mixture.re.data().len();
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let (xr, xi) = (mixture.re.data()[i], mixture.im.data()[i]);
        let (sr, si) = (source.re.data()[i], source.im.data()[i]);
        let den = libm::sqrt(xr * xr + xi * xi) * libm::sqrt(sr * sr + si * si);
        if den > 0.0 {
            *o = (sr * xr + si * xi) / den;
        }
    }
    Matrix::from_vec(mixture.frames(), mixture.bins(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{StftConfig, Window};
    use rand::Rng as _;

    fn cfg() -> StftConfig {
        StftConfig { fft_size: 8, hop: 2, window: Window::Hann, center: true }
    }

    fn spec(re: Vec<f64>, im: Vec<f64>, rows: usize) -> ComplexSpectrogram {
        let cols = re.len() / rows;
        ComplexSpectrogram::new(
            Matrix::from_vec(rows, cols, re),
            Matrix::from_vec(rows, cols, im),
            cfg(),
            8000,
        )
        .unwrap()
    }

    fn random_spec(rng: &mut crate::rng::Rng, rows: usize) -> ComplexSpectrogram {
        let n = rows * 5;
        spec(
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            rows,
        )
    }

    #[test]
    fn single_active_source_gets_unit_masks() {
        let mut rng = crate::rng::seeded(4);
        let s1 = random_spec(&mut rng, 3);
        let s2 = spec(vec![0.0; 15], vec![0.0; 15], 3);
        let mix = s1.add(&s2).unwrap();
        let irm = ideal_masks(&[s1.clone(), s2.clone()], &mix, MaskKind::Irm).unwrap();
        let psm = ideal_masks(&[s1, s2], &mix, MaskKind::Psm).unwrap();
        for i in 0..15 {
            assert!((irm[0].values.data()[i] - 1.0).abs() < 1e-6);
            assert!((psm[0].values.data()[i] - 1.0).abs() < 1e-6);
            assert_eq!(irm[1].values.data()[i], 0.0);
            assert_eq!(psm[1].values.data()[i], 0.0);
        }
    }

    #[test]
    fn psm_is_zero_at_quadrature() {
        // |S| = 1 at phase pi/2, |X| = 2 at phase 0.
        let s = spec(vec![0.0; 5], vec![1.0, 0.0, 0.0, 0.0, 0.0], 1);
        let other = spec(vec![2.0, 0.0, 0.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0, 0.0, 0.0], 1);
        let mix = s.add(&other).unwrap();
        assert_eq!(mix.re.data()[0], 2.0);
        assert_eq!(mix.im.data()[0], 0.0);
        let psm = ideal_masks(&[s, other], &mix, MaskKind::Psm).unwrap();
        assert_eq!(psm[0].values.data()[0], 0.0);
    }

    #[test]
    fn psm_matches_complex_oracle_and_irm_sums_to_one() {
        let mut rng = crate::rng::seeded(11);
        let sources: Vec<_> = (0..3).map(|_| random_spec(&mut rng, 4)).collect();
        let mix = sources[0].add(&sources[1]).unwrap().add(&sources[2]).unwrap();
        let psm = ideal_masks(&sources, &mix, MaskKind::Psm).unwrap();
        let irm = ideal_masks(&sources, &mix, MaskKind::Irm).unwrap();
        for i in 0..20 {
            let (xr, xi) = (mix.re.data()[i], mix.im.data()[i]);
            for (c, s) in sources.iter().enumerate() {
                let (sr, si) = (s.re.data()[i], s.im.data()[i]);
                let oracle = (sr * xr + si * xi) / (xr * xr + xi * xi);
                assert!((psm[c].values.data()[i] - oracle).abs() < 1e-10 * oracle.abs().max(1.0));
            }
            let total: f64 = irm.iter().map(|m| m.values.data()[i]).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn psm_of_mixture_against_itself_is_one() {
        let mut rng = crate::rng::seeded(12);
        let x = random_spec(&mut rng, 4);
        let zero = spec(vec![0.0; 20], vec![0.0; 20], 4);
        let psm = ideal_masks(&[x.clone(), zero], &x, MaskKind::Psm).unwrap();
        assert!(psm[0].values.data().iter().all(|v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn ibm_is_binary_one_hot() {
        let mut rng = crate::rng::seeded(13);
        let sources: Vec<_> = (0..3).map(|_| random_spec(&mut rng, 4)).collect();
        let mix = sources[0].add(&sources[1]).unwrap().add(&sources[2]).unwrap();
        let ibm = ideal_masks(&sources, &mix, MaskKind::Ibm).unwrap();
        for i in 0..20 {
            let s: f64 = ibm.iter().map(|m| m.values.data()[i]).sum();
            assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn truncation_examples() {
        assert_eq!(truncate_scalar(1.5, 0.0, 1.0), 1.0);
        assert_eq!(truncate_scalar(-0.2, 0.0, 1.0), 0.0);
        assert_eq!(truncate_scalar(1.5, 0.0, 2.0), 1.5);
        let x = Matrix::from_vec(1, 3, vec![1.5, -0.2, 0.5]);
        let hi = Matrix::from_vec(1, 3, vec![1.0, 1.0, 0.25]);
        let t = truncate(&x, Bound::Scalar(0.0), Bound::Matrix(&hi)).unwrap();
        assert_eq!(t.data(), &[1.0, 0.0, 0.25]);
        assert!(truncate(&x, Bound::Scalar(2.0), Bound::Scalar(1.0)).is_err());
    }

    #[test]
    fn dominance_examples() {
        let loud = spec(vec![2.0; 10], vec![0.0; 10], 2);
        let quiet = spec(vec![1.0; 10], vec![0.0; 10], 2);
        let y = dominance_labels(&[quiet.clone(), loud]).unwrap();
        assert!((0..10).all(|i| y.values.get(i, 1) == 1.0 && y.values.get(i, 0) == 0.0));
        let y = dominance_labels(&[quiet.clone(), quiet]).unwrap();
        assert!((0..10).all(|i| y.label(i) == 0));
    }

    #[test]
    fn dominance_matches_scan_oracle() {
        let mut rng = crate::rng::seeded(14);
        let sources: Vec<_> = (0..3).map(|_| random_spec(&mut rng, 6)).collect();
        let y = dominance_labels(&sources).unwrap();
        for i in 0..30 {
            let mags: Vec<f64> = sources
                .iter()
                .map(|s| libm::hypot(s.re.data()[i], s.im.data()[i]))
                .collect();
            let mut best = 0;
            for c in 0..3 {
                if mags[c] > mags[best] {
                    best = c;
                }
            }
            assert_eq!(y.label(i), best);
            assert_eq!(y.values.row(i).iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn va_weight_examples() {
        let flat = spec(vec![0.3; 10], vec![0.4; 10], 2);
        for th in [0.1, 40.0, 90.0] {
            assert!(va_weights(&flat, th).unwrap().values.data().iter().all(|&w| w == 1.0));
        }
        let mut re = vec![1.0; 10];
        re[3] = 0.0;
        let one_silent = spec(re, vec![0.0; 10], 2);
        let w = va_weights(&one_silent, 40.0).unwrap();
        assert_eq!(w.values.data()[3], 0.0);
        assert_eq!(w.values.sum(), 9.0);
        let silent = spec(vec![0.0; 10], vec![0.0; 10], 2);
        assert_eq!(va_weights(&silent, 40.0).unwrap().values.sum(), 0.0);
        assert!(va_weights(&flat, 0.0).is_err());
    }

    #[test]
    fn va_weights_match_db_scan() {
        let mut rng = crate::rng::seeded(15);
        let n = 200;
        let re: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0) * libm::pow(10.0, rng.gen_range(-4.0..0.0))).collect();
        let im: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0) * 1e-3).collect();
        let x = spec(re.clone(), im.clone(), 40);
        let w = va_weights(&x, 40.0).unwrap();
        let db: Vec<f64> = (0..n).map(|i| 20.0 * libm::log10(libm::hypot(re[i], im[i]))).collect();
        let max_db = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for i in 0..n {
            let expected = if db[i] > max_db - 40.0 { 1.0 } else { 0.0 };
            assert_eq!(w.values.data()[i], expected, "bin {i}");
        }
    }
}
