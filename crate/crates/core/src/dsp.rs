//! Waveforms, STFT analysis/synthesis and log-power-spectrum features.
//!
//! Fixed front end: 16 kHz audio, 512-sample (32 ms) frames, 256-sample hop,
//! periodic Hann window, 257 frequency bins. Analysis windows satisfy
//! constant overlap-add at 50% hop, so synthesis is plain overlap-add of the
//! inverse transforms and reconstructs interior samples exactly.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex;

use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;
pub const FRAME_LEN: usize = 512;
pub const HOP: usize = 256;
/// Frequency bins per frame: FRAME_LEN/2 + 1.
pub const F_BINS: usize = 257;
/// One-third octave band count for the 16 kHz / 512-point front end.
pub const N_BANDS: usize = 15;
/// Default power floor inside the log, `ln(max(|S|^2, LPS_FLOOR))`.
pub const LPS_FLOOR: f64 = 1e-12;

/// Mono waveform at 16 kHz with samples in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Self {
        Waveform {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean squared sample value.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |acc, &x| acc.max(math::abs(x)))
    }
}

/// Complex STFT of one utterance, frequency-major: `bins[k * frames + m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub f_bins: usize,
    pub frames: usize,
    pub frame_len: usize,
    pub hop: usize,
    pub bins: Vec<Complex<f64>>,
}

impl Spectrogram {
    #[inline]
    pub fn at(&self, k: usize, m: usize) -> Complex<f64> {
        self.bins[k * self.frames + m]
    }

    #[inline]
    pub fn set(&mut self, k: usize, m: usize, v: Complex<f64>) {
        self.bins[k * self.frames + m] = v;
    }

    /// Magnitudes as an `[F, M]` tensor.
    pub fn magnitudes(&self) -> Tensor {
        let data = self.bins.iter().map(|c| c.norm_sqr()).map(math::sqrt).collect();
        Tensor::new(&[self.f_bins, self.frames], data).expect("consistent dims")
    }

    /// Energy of frame `m`, summed over bins.
    pub fn frame_energy(&self, m: usize) -> f64 {
        (0..self.f_bins).map(|k| self.at(k, m).norm_sqr()).sum()
    }

    /// New spectrogram keeping only the listed frames, in order.
    pub fn select_frames(&self, keep: &[usize]) -> Spectrogram {
        let mut bins = Vec::with_capacity(self.f_bins * keep.len());
        for k in 0..self.f_bins {
            for &m in keep {
                bins.push(self.at(k, m));
            }
        }
        Spectrogram {
            f_bins: self.f_bins,
            frames: keep.len(),
            frame_len: self.frame_len,
            hop: self.hop,
            bins,
        }
    }
}

/// Log power spectrum `[F, M]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LpsMatrix {
    pub values: Tensor,
}

impl LpsMatrix {
    pub fn f_bins(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[1]
    }
}

/// One-third octave band energies `[J, M]` with the bin ranges that produced
/// them (inclusive on both ends).
#[derive(Clone, Debug, PartialEq)]
pub struct OctaveBandMatrix {
    pub values: Tensor,
    pub band_edges: Vec<(usize, usize)>,
}

impl OctaveBandMatrix {
    pub fn bands(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[1]
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - math::cos(2.0 * math::PI * i as f64 / n as f64)))
        .collect()
}

/// In-place iterative radix-2 FFT. `buf.len()` must be a power of two.
/// The inverse transform includes the 1/N scaling.
pub fn fft_inplace(buf: &mut [Complex<f64>], inverse: bool) {
    let n = buf.len();
    assert!(n.is_power_of_two(), "fft length must be a power of two");
    if n < 2 {
        return;
    }

    // bit-reversal permutation
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }

    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * math::PI / len as f64;
        let wlen = Complex::new(math::cos(ang), math::sin(ang));
        let mut i = 0;
        while i < n {
            let mut w = Complex::new(1.0, 0.0);
            for k in 0..len / 2 {
                let u = buf[i + k];
                let v = buf[i + k + len / 2] * w;
                buf[i + k] = u + v;
                buf[i + k + len / 2] = u - v;
                w *= wlen;
            }
            i += len;
        }
        len <<= 1;
    }

    if inverse {
        let scale = 1.0 / n as f64;
        for x in buf.iter_mut() {
            *x *= scale;
        }
    }
}

/// Frame count for a signal of `len` samples: `1 + floor((len - FRAME_LEN)/HOP)`.
/// The trailing partial frame is dropped.
pub fn frame_count(len: usize) -> Option<usize> {
    if len < FRAME_LEN {
        None
    } else {
        Some(1 + (len - FRAME_LEN) / HOP)
    }
}

/// Short-time Fourier transform with the fixed 512/256 Hann front end.
pub fn stft(w: &Waveform) -> Result<Spectrogram> {
    let m_frames = frame_count(w.samples.len()).ok_or_else(|| {
        Error::invalid(
            "stft",
            format!("signal of {} samples is shorter than one {}-sample frame", w.samples.len(), FRAME_LEN),
        )
    })?;
    let window = hann_periodic(FRAME_LEN);
    let mut bins = vec![Complex::new(0.0, 0.0); F_BINS * m_frames];
    let mut buf = vec![Complex::new(0.0, 0.0); FRAME_LEN];
    for m in 0..m_frames {
        let start = m * HOP;
        for i in 0..FRAME_LEN {
            buf[i] = Complex::new(w.samples[start + i] * window[i], 0.0);
        }
        fft_inplace(&mut buf, false);
        for (k, row) in bins.chunks_exact_mut(m_frames).enumerate() {
            row[m] = buf[k];
        }
    }
    Ok(Spectrogram {
        f_bins: F_BINS,
        frames: m_frames,
        frame_len: FRAME_LEN,
        hop: HOP,
        bins,
    })
}

/// Inverse STFT by overlap-add of the inverse transforms.
///
/// The analysis Hann window at 50% hop satisfies constant overlap-add, so an
/// unmodified spectrogram reconstructs its signal exactly except within the
/// first and last half frame (those lack an overlapping partner).
pub fn istft(s: &Spectrogram) -> Result<Waveform> {
    if s.hop * 2 != s.frame_len {
        return Err(Error::invalid(
            "istft",
            format!("hop {} must be half the frame length {}", s.hop, s.frame_len),
        ));
    }
    if s.f_bins != s.frame_len / 2 + 1 {
        return Err(Error::shape(
            "istft",
            format!("{} bins inconsistent with frame length {}", s.f_bins, s.frame_len),
        ));
    }
    let n = s.frame_len;
    let out_len = if s.frames == 0 { 0 } else { n + (s.frames - 1) * s.hop };
    let mut out = vec![0.0; out_len];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for m in 0..s.frames {
        buf[0] = s.at(0, m);
        buf[n / 2] = s.at(n / 2, m);
        for k in 1..n / 2 {
            let v = s.at(k, m);
            buf[k] = v;
            buf[n - k] = v.conj();
        }
        fft_inplace(&mut buf, true);
        let start = m * s.hop;
        for i in 0..n {
            out[start + i] += buf[i].re;
        }
    }
    Ok(Waveform::new(out))
}

/// Log power spectrum: `ln(max(|S|^2, floor))`.
pub fn lps(s: &Spectrogram, floor: f64) -> Result<LpsMatrix> {
    if floor <= 0.0 {
        return Err(Error::invalid("lps", format!("floor must be positive, got {floor}")));
    }
    let data = s
        .bins
        .iter()
        .map(|c| math::ln(c.norm_sqr().max(floor)))
        .collect();
    Ok(LpsMatrix {
        values: Tensor::new(&[s.f_bins, s.frames], data).expect("consistent dims"),
    })
}

/// Inverse of [`lps`] above the floor: `exp(values/2)` elementwise gives the
/// magnitude spectrum.
pub fn lps_to_abs(l: &LpsMatrix) -> Tensor {
    l.values.map(|x| math::exp(x / 2.0))
}

/// One-third octave band edges over the 257-bin grid: 15 bands with center
/// frequencies `150 * 2^(j/3)` Hz and edges a sixth of an octave out, each
/// edge mapped to the nearest STFT bin. Returned ranges are inclusive,
/// contiguous and non-overlapping.
pub fn one_third_octave_bands() -> Vec<(usize, usize)> {
    let df = SAMPLE_RATE as f64 / FRAME_LEN as f64;
    (0..N_BANDS)
        .map(|j| {
            let cf = 150.0 * math::pow(2.0, j as f64 / 3.0);
            let lo = math::round(cf * math::pow(2.0, -1.0 / 6.0) / df) as usize;
            let hi = math::round(cf * math::pow(2.0, 1.0 / 6.0) / df) as usize - 1;
            (lo, hi)
        })
        .collect()
}

/// Band energies per Eq-style pooling: `S_j(m) = sqrt(sum_k |S(k,m)|^2)` over
/// the band's bins. `abs_stft` must be a nonnegative `[F, M]` matrix.
pub fn octave_bands(abs_stft: &Tensor) -> Result<OctaveBandMatrix> {
    if abs_stft.rank() != 2 || abs_stft.shape()[0] != F_BINS {
        return Err(Error::shape(
            "octave_bands",
            format!("expected [{F_BINS}, M], got {:?}", abs_stft.shape()),
        ));
    }
    let m_frames = abs_stft.shape()[1];
    let edges = one_third_octave_bands();
    let mut out = Tensor::zeros(&[edges.len(), m_frames]);
    let src = abs_stft.data();
    for (j, &(lo, hi)) in edges.iter().enumerate() {
        for m in 0..m_frames {
            let mut acc = 0.0;
            for k in lo..=hi {
                let v = src[k * m_frames + m];
                acc += v * v;
            }
            out.set2(j, m, math::sqrt(acc));
        }
    }
    Ok(OctaveBandMatrix {
        values: out,
        band_edges: edges,
    })
}

/// Per-bin standardization `(x - mean) / std` with stats from the clean
/// training corpus.
pub fn normalize_lps(l: &LpsMatrix, stats: &NormStats) -> Result<LpsMatrix> {
    check_stats("normalize_lps", l, stats)?;
    let (f, m) = (l.f_bins(), l.frames());
    let mut out = Tensor::zeros(&[f, m]);
    for k in 0..f {
        let mu = stats.mean[k];
        let sd = stats.std[k];
        for t in 0..m {
            out.set2(k, t, (l.values.at2(k, t) - mu) / sd);
        }
    }
    Ok(LpsMatrix { values: out })
}

/// Exact inverse of [`normalize_lps`].
pub fn denormalize_lps(l: &LpsMatrix, stats: &NormStats) -> Result<LpsMatrix> {
    check_stats("denormalize_lps", l, stats)?;
    let (f, m) = (l.f_bins(), l.frames());
    let mut out = Tensor::zeros(&[f, m]);
    for k in 0..f {
        let mu = stats.mean[k];
        let sd = stats.std[k];
        for t in 0..m {
            out.set2(k, t, l.values.at2(k, t) * sd + mu);
        }
    }
    Ok(LpsMatrix { values: out })
}

fn check_stats(op: &'static str, l: &LpsMatrix, stats: &NormStats) -> Result<()> {
    if stats.mean.len() != l.f_bins() || stats.std.len() != l.f_bins() {
        return Err(Error::shape(
            op,
            format!("stats cover {} bins, matrix has {}", stats.mean.len(), l.f_bins()),
        ));
    }
    if let Some(k) = stats.std.iter().position(|&s| s <= 0.0) {
        return Err(Error::invalid(op, format!("std[{k}] = {} is not positive", stats.std[k])));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[Complex<f64>]) -> Vec<Complex<f64>> {
        let n = x.len();
        (0..n)
            .map(|k| {
                let mut acc = Complex::new(0.0, 0.0);
                for (i, &v) in x.iter().enumerate() {
                    let ang = -2.0 * math::PI * (k * i) as f64 / n as f64;
                    acc += v * Complex::new(math::cos(ang), math::sin(ang));
                }
                acc
            })
            .collect()
    }

    #[test]
    fn fft_matches_naive_dft() {
        let mut s = crate::rng::SeedStream::new(5);
        let x: Vec<Complex<f64>> = (0..64)
            .map(|_| Complex::new(s.uniform(-1.0, 1.0), s.uniform(-1.0, 1.0)))
            .collect();
        let expected = naive_dft(&x);
        let mut got = x.clone();
        fft_inplace(&mut got, false);
        for (g, e) in got.iter().zip(&expected) {
            assert!(math::sqrt((g - e).norm_sqr()) < 1e-10, "fft deviates from naive dft");
        }
        // inverse returns the input
        fft_inplace(&mut got, true);
        for (g, e) in got.iter().zip(&x) {
            assert!(math::sqrt((g - e).norm_sqr()) < 1e-12);
        }
    }

    #[test]
    fn stft_of_zeros_is_single_zero_frame() {
        let w = Waveform::new(vec![0.0; 512]);
        let s = stft(&w).unwrap();
        assert_eq!(s.frames, 1);
        assert_eq!(s.f_bins, 257);
        assert!(s.bins.iter().all(|c| c.norm_sqr() == 0.0));
    }

    #[test]
    fn frame_count_formula() {
        assert_eq!(frame_count(511), None);
        assert_eq!(frame_count(512), Some(1));
        assert_eq!(frame_count(1280), Some(4));
        assert_eq!(frame_count(1281), Some(4));
    }

    #[test]
    fn sine_peaks_at_its_bin_with_closed_form_magnitude() {
        // 1 kHz at 16 kHz lands exactly on bin 32. A Hann-windowed on-grid
        // sine has |X[32]| = N/4 because the window spectrum vanishes beyond
        // its immediate neighbours.
        let n = 16_000;
        let samples: Vec<f64> = (0..n)
            .map(|i| math::sin(2.0 * math::PI * 1000.0 * i as f64 / 16_000.0))
            .collect();
        let s = stft(&Waveform::new(samples)).unwrap();
        for m in 0..s.frames {
            let mags: Vec<f64> = (0..s.f_bins).map(|k| math::sqrt(s.at(k, m).norm_sqr())).collect();
            let peak = mags
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(peak, 32);
            assert!((mags[32] - 128.0).abs() < 1e-9, "main lobe {}", mags[32]);
            assert!(mags[40] < 1e-9, "leakage far from the tone");
        }
    }

    #[test]
    fn istft_requires_half_overlap() {
        let w = Waveform::new(vec![0.0; 1024]);
        let mut s = stft(&w).unwrap();
        s.hop = 100;
        assert!(istft(&s).is_err());
    }

    #[test]
    fn istft_of_zero_spectrogram_is_silence() {
        let s = stft(&Waveform::new(vec![0.0; 2048])).unwrap();
        let w = istft(&s).unwrap();
        assert!(w.samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn roundtrip_reconstructs_interior_samples() {
        let mut rng = crate::rng::SeedStream::new(7);
        let samples: Vec<f64> = (0..16_000).map(|_| rng.uniform(-0.8, 0.8)).collect();
        let w = Waveform::new(samples);
        let s = stft(&w).unwrap();
        let r = istft(&s).unwrap();
        let half = FRAME_LEN / 2;
        let mut max_err: f64 = 0.0;
        for i in half..r.len() - half {
            max_err = max_err.max(math::abs(r.samples[i] - w.samples[i]));
        }
        assert!(max_err < 1e-6, "interior reconstruction error {max_err}");
    }

    #[test]
    fn lps_floor_and_inverse() {
        let s = stft(&Waveform::new(vec![0.0; 512])).unwrap();
        let l = lps(&s, 1e-12).unwrap();
        for &v in l.values.data() {
            assert!((v - (1e-12f64).ln()).abs() < 1e-9);
        }
        assert!(lps(&s, 0.0).is_err());

        // above the floor, exp(lps/2) recovers |S|
        let mut rng = crate::rng::SeedStream::new(9);
        let samples: Vec<f64> = (0..4096).map(|_| rng.uniform(-0.5, 0.5)).collect();
        let s = stft(&Waveform::new(samples)).unwrap();
        let l = lps(&s, 1e-12).unwrap();
        let back = lps_to_abs(&l);
        let mags = s.magnitudes();
        for (a, b) in back.data().iter().zip(mags.data()) {
            if b * b > 1e-12 {
                assert!((a - b).abs() <= 1e-12 * a.max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn band_table_matches_hand_derivation() {
        // Derived once from the center-frequency rule: cf = 150*2^(j/3),
        // edges cf*2^(±1/6), nearest bin at 31.25 Hz spacing, upper edge
        // exclusive then made inclusive.
        let expected = vec![
            (4, 4),
            (5, 6),
            (7, 8),
            (9, 10),
            (11, 13),
            (14, 16),
            (17, 21),
            (22, 26),
            (27, 33),
            (34, 42),
            (43, 53),
            (54, 67),
            (68, 85),
            (86, 108),
            (109, 136),
        ];
        let got = one_third_octave_bands();
        assert_eq!(got, expected);
        // contiguous, ordered, within the grid
        for w in got.windows(2) {
            assert_eq!(w[0].1 + 1, w[1].0);
        }
        assert!(got.last().unwrap().1 <= 256);
    }

    #[test]
    fn octave_band_three_four_five() {
        // one band holding 3 and 4 pools to 5
        let mut abs = Tensor::zeros(&[F_BINS, 1]);
        abs.set2(5, 0, 3.0);
        abs.set2(6, 0, 4.0);
        let bands = octave_bands(&abs).unwrap();
        assert!((bands.values.at2(1, 0) - 5.0).abs() < 1e-12);
        // all-zero frame -> all bands zero
        let zero = octave_bands(&Tensor::zeros(&[F_BINS, 1])).unwrap();
        assert!(zero.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalization_roundtrip() {
        let mut rng = crate::rng::SeedStream::new(21);
        let vals = Tensor::rand_uniform(&[F_BINS, 6], -8.0, 2.0, &mut rng);
        let l = LpsMatrix { values: vals };
        let stats = NormStats {
            mean: (0..F_BINS).map(|k| -3.0 + k as f64 * 0.01).collect(),
            std: (0..F_BINS).map(|k| 1.0 + (k % 7) as f64 * 0.25).collect(),
            n_frames: 100,
        };
        let n = normalize_lps(&l, &stats).unwrap();
        let d = denormalize_lps(&n, &stats).unwrap();
        for (a, b) in d.values.data().iter().zip(l.values.data()) {
            assert!((a - b).abs() < 1e-12);
        }

        // identity stats
        let id = NormStats {
            mean: vec![0.0; F_BINS],
            std: vec![1.0; F_BINS],
            n_frames: 1,
        };
        let n = normalize_lps(&l, &id).unwrap();
        assert_eq!(n.values, l.values);

        // non-positive std rejected
        let mut bad = id.clone();
        bad.std[3] = 0.0;
        assert!(normalize_lps(&l, &bad).is_err());
    }
}
