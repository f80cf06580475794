//! Corpus preparation math: SNR mixing, normalization statistics and
//! training-sample slicing. File discovery, manifests and caches live in the
//! CLI crate; everything here is pure.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::dsp::{LpsMatrix, Waveform, F_BINS};
use crate::error::{Error, Result};
use crate::loss::{clipped_magnitudes, silence_mask, FrameMask, LossConfig};
use crate::math;
use crate::rng::SeedStream;
use crate::tensor::Tensor;

/// Per-bin normalization statistics over the clean training corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n_frames: u64,
}

/// Outcome of mixing one utterance: the noisy mixture, the clean target
/// rescaled by the same peak factor, and the factors themselves.
#[derive(Clone, Debug)]
pub struct MixResult {
    pub noisy: Waveform,
    pub clean: Waveform,
    pub noise_gain: f64,
    pub peak_scale: f64,
    pub noise_offset: usize,
}

/// Adds a seeded-offset noise segment to `speech`, scaled so the realized
/// speech-to-noise power ratio hits `snr_db` exactly, then peak-normalizes
/// the mixture to at most 0.999 and applies the same factor to the clean
/// target so the pair stays aligned.
pub fn mix_at_snr(speech: &Waveform, noise: &Waveform, snr_db: f64, seed: u64) -> Result<MixResult> {
    if speech.is_empty() {
        return Err(Error::invalid("mix_at_snr", "empty speech"));
    }
    if noise.len() < speech.len() {
        return Err(Error::invalid(
            "mix_at_snr",
            format!("noise of {} samples shorter than speech of {}", noise.len(), speech.len()),
        ));
    }
    let offset = SeedStream::new(seed).below(noise.len());
    let segment: Vec<f64> = (0..speech.len())
        .map(|i| noise.samples[(offset + i) % noise.len()])
        .collect();

    let p_speech = speech.power();
    let p_noise = segment.iter().map(|x| x * x).sum::<f64>() / segment.len() as f64;
    if p_speech <= 0.0 {
        return Err(Error::invalid("mix_at_snr", "speech has zero power"));
    }
    if p_noise <= 0.0 {
        return Err(Error::invalid("mix_at_snr", "noise segment has zero power"));
    }
    let gain = math::sqrt(p_speech / (p_noise * math::db_to_power(snr_db)));

    let mixed: Vec<f64> = speech
        .samples
        .iter()
        .zip(&segment)
        .map(|(s, n)| s + gain * n)
        .collect();
    let peak = mixed.iter().fold(0.0f64, |acc, &x| acc.max(math::abs(x)));
    let peak_scale = if peak > 0.999 { 0.999 / peak } else { 1.0 };

    Ok(MixResult {
        noisy: Waveform::new(mixed.iter().map(|x| x * peak_scale).collect()),
        clean: Waveform::new(speech.samples.iter().map(|x| x * peak_scale).collect()),
        noise_gain: gain,
        peak_scale,
        noise_offset: offset,
    })
}

/// Per-bin mean and population standard deviation over all frames of the
/// clean corpus (Welford accumulation). The std is floored at 1e-8 so
/// degenerate bins stay usable.
pub fn compute_norm_stats<'a, I>(corpus: I) -> Result<NormStats>
where
    I: IntoIterator<Item = &'a LpsMatrix>,
{
    let mut count: u64 = 0;
    let mut mean = alloc::vec![0.0f64; F_BINS];
    let mut m2 = alloc::vec![0.0f64; F_BINS];
    for lps in corpus {
        if lps.f_bins() != F_BINS {
            return Err(Error::shape(
                "compute_norm_stats",
                format!("expected {} bins, got {}", F_BINS, lps.f_bins()),
            ));
        }
        let frames = lps.frames();
        for m in 0..frames {
            count += 1;
            let n = count as f64;
            for k in 0..F_BINS {
                let x = lps.values.at2(k, m);
                let delta = x - mean[k];
                mean[k] += delta / n;
                m2[k] += delta * (x - mean[k]);
            }
        }
    }
    if count < 2 {
        return Err(Error::TooFewFrames {
            got: count as usize,
            needed: 2,
        });
    }
    let std = m2
        .iter()
        .map(|&v| math::sqrt(v / count as f64).max(1e-8))
        .collect();
    Ok(NormStats {
        mean,
        std,
        n_frames: count,
    })
}

/// One normalized training pair plus the frame mask of its clean slice.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    /// `[257, len]` normalized noisy features.
    pub noisy: Tensor,
    /// `[257, len]` normalized clean features.
    pub clean: Tensor,
    pub mask: FrameMask,
    pub source: String,
    pub frame_offset: usize,
}

/// Sample geometry: 40-frame windows at 50% overlap.
#[derive(Clone, Copy, Debug)]
pub struct SliceConfig {
    pub len: usize,
    pub overlap: f64,
}

impl Default for SliceConfig {
    fn default() -> Self {
        SliceConfig {
            len: 40,
            overlap: 0.5,
        }
    }
}

impl SliceConfig {
    pub fn stride(&self) -> usize {
        (math::round(self.len as f64 * (1.0 - self.overlap)) as usize).max(1)
    }
}

/// Cuts a normalized utterance into fixed-length windows at the configured
/// overlap (trailing partial window dropped), computing each window's clean
/// frame mask and discarding windows with fewer than `loss.min_active`
/// active frames. Short utterances yield no samples.
pub fn slice_samples(
    noisy_norm: &LpsMatrix,
    clean_norm: &LpsMatrix,
    stats: &NormStats,
    slice: &SliceConfig,
    loss: &LossConfig,
    source: &str,
) -> Result<Vec<TrainingSample>> {
    if noisy_norm.values.shape() != clean_norm.values.shape() {
        return Err(Error::shape(
            "slice_samples",
            format!(
                "{:?} vs {:?}",
                noisy_norm.values.shape(),
                clean_norm.values.shape()
            ),
        ));
    }
    let m = noisy_norm.frames();
    let len = slice.len;
    let stride = slice.stride();
    let mut out = Vec::new();
    if m < len {
        return Ok(out);
    }
    let mut start = 0;
    while start + len <= m {
        let noisy = take_cols(&noisy_norm.values, start, len);
        let clean = take_cols(&clean_norm.values, start, len);
        let clipped = clipped_magnitudes(&clean, stats);
        let mask = silence_mask(&clipped, loss.theta, loss.bin_floor);
        if mask.len() >= loss.min_active {
            out.push(TrainingSample {
                noisy,
                clean,
                mask,
                source: String::from(source),
                frame_offset: start,
            });
        }
        start += stride;
    }
    Ok(out)
}

fn take_cols(t: &Tensor, start: usize, len: usize) -> Tensor {
    let (f, m) = (t.shape()[0], t.shape()[1]);
    let mut out = Tensor::zeros(&[f, len]);
    for k in 0..f {
        let src = &t.data()[k * m + start..k * m + start + len];
        out.data_mut()[k * len..(k + 1) * len].copy_from_slice(src);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unity_gain_at_equal_power_zero_snr() {
        let speech = Waveform::new(alloc::vec![0.3; 8000]);
        let noise = Waveform::new(alloc::vec![0.3; 16000]);
        let mix = mix_at_snr(&speech, &noise, 0.0, 1).unwrap();
        assert!((mix.noise_gain - 1.0).abs() < 1e-12);
        // snr 10 -> 10^(-1/2)
        let mix10 = mix_at_snr(&speech, &noise, 10.0, 1).unwrap();
        assert!((mix10.noise_gain - math::pow(10.0, -0.5)).abs() < 1e-12);
    }

    #[test]
    fn realized_snr_matches_target() {
        let mut rng = SeedStream::new(5);
        let speech = Waveform::new((0..16000).map(|_| rng.uniform(-0.4, 0.4)).collect());
        let noise = Waveform::new((0..32000).map(|_| rng.uniform(-0.7, 0.7)).collect());
        for &target in &[-5.0, 0.0, 5.0] {
            let mix = mix_at_snr(&speech, &noise, target, 99).unwrap();
            let noise_part: Vec<f64> = mix
                .noisy
                .samples
                .iter()
                .zip(&mix.clean.samples)
                .map(|(n, c)| n - c)
                .collect();
            let p_n = noise_part.iter().map(|x| x * x).sum::<f64>() / noise_part.len() as f64;
            let realized = 10.0 * math::log10(mix.clean.power() / p_n);
            assert!(
                (realized - target).abs() < 0.01,
                "target {target} dB, realized {realized} dB"
            );
        }
    }

    #[test]
    fn mixing_rejects_degenerate_inputs() {
        let silent = Waveform::new(alloc::vec![0.0; 1000]);
        let tone = Waveform::new(alloc::vec![0.5; 1000]);
        assert!(mix_at_snr(&silent, &tone, 0.0, 1).is_err());
        assert!(mix_at_snr(&tone, &silent, 0.0, 1).is_err());
        let short_noise = Waveform::new(alloc::vec![0.5; 10]);
        assert!(mix_at_snr(&tone, &short_noise, 0.0, 1).is_err());
    }

    #[test]
    fn peak_normalization_rescales_both_signals() {
        let speech = Waveform::new(alloc::vec![0.9; 4000]);
        let noise = Waveform::new(alloc::vec![0.9; 8000]);
        let mix = mix_at_snr(&speech, &noise, 0.0, 3).unwrap();
        assert!(mix.peak_scale < 1.0);
        assert!(mix.noisy.peak() <= 0.999 + 1e-12);
        for (c, s) in mix.clean.samples.iter().zip(&speech.samples) {
            assert!((c - s * mix.peak_scale).abs() < 1e-15);
        }
    }

    #[test]
    fn stats_simple_two_frame_case() {
        // two frames with values {0, 2} per bin: mean 1, population std 1
        let mut v = Tensor::zeros(&[F_BINS, 2]);
        for k in 0..F_BINS {
            v.set2(k, 1, 2.0);
        }
        let l = LpsMatrix { values: v };
        let stats = compute_norm_stats([&l]).unwrap();
        assert!(stats.mean.iter().all(|&m| (m - 1.0).abs() < 1e-12));
        assert!(stats.std.iter().all(|&s| (s - 1.0).abs() < 1e-12));
        assert_eq!(stats.n_frames, 2);
    }

    #[test]
    fn stats_floor_for_constant_corpus() {
        let l = LpsMatrix {
            values: Tensor::full(&[F_BINS, 8], -3.5),
        };
        let stats = compute_norm_stats([&l]).unwrap();
        assert!(stats.std.iter().all(|&s| s == 1e-8));
        // too small a corpus errors
        let one = LpsMatrix {
            values: Tensor::zeros(&[F_BINS, 1]),
        };
        assert!(compute_norm_stats([&one]).is_err());
        assert!(compute_norm_stats([]).is_err());
    }

    #[test]
    fn stats_match_brute_force_over_synthetic_corpus() {
        let mut rng = SeedStream::new(77);
        let corpus: Vec<LpsMatrix> = (0..100)
            .map(|_| {
                let frames = 2 + rng.below(9);
                LpsMatrix {
                    values: Tensor::rand_uniform(&[F_BINS, frames], -20.0, 3.0, &mut rng),
                }
            })
            .collect();
        let stats = compute_norm_stats(corpus.iter()).unwrap();

        // brute force: gather every frame, take mean/std directly
        for k in (0..F_BINS).step_by(37) {
            let xs: Vec<f64> = corpus
                .iter()
                .flat_map(|l| (0..l.frames()).map(move |m| l.values.at2(k, m)))
                .collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
            assert!((stats.mean[k] - mean).abs() < 1e-10);
            assert!((stats.std[k] - math::sqrt(var)).abs() < 1e-10);
        }
        assert_eq!(stats.n_frames as usize, corpus.iter().map(|l| l.frames()).sum::<usize>());
    }

    fn active_lps(frames: usize) -> LpsMatrix {
        // magnitudes ~0.3 everywhere: every frame passes the energy test
        LpsMatrix {
            values: Tensor::full(&[F_BINS, frames], 2.0 * math::ln(0.3)),
        }
    }

    fn unit_stats() -> NormStats {
        NormStats {
            mean: alloc::vec![0.0; F_BINS],
            std: alloc::vec![1.0; F_BINS],
            n_frames: 2,
        }
    }

    #[test]
    fn slicing_stride_arithmetic() {
        let l = active_lps(80);
        let samples = slice_samples(
            &l,
            &l,
            &unit_stats(),
            &SliceConfig::default(),
            &LossConfig::default(),
            "utt0",
        )
        .unwrap();
        assert_eq!(samples.len(), 3);
        assert_eq!(
            samples.iter().map(|s| s.frame_offset).collect::<Vec<_>>(),
            alloc::vec![0, 20, 40]
        );
        assert_eq!(samples[0].noisy.shape(), &[F_BINS, 40]);

        // too short: zero samples
        let short = active_lps(39);
        assert!(slice_samples(
            &short,
            &short,
            &unit_stats(),
            &SliceConfig::default(),
            &LossConfig::default(),
            "utt1"
        )
        .unwrap()
        .is_empty());
    }

    #[test]
    fn silent_utterance_yields_no_samples() {
        let silent = LpsMatrix {
            values: Tensor::full(&[F_BINS, 100], -30.0), // magnitudes ~3e-7
        };
        let samples = slice_samples(
            &silent,
            &silent,
            &unit_stats(),
            &SliceConfig::default(),
            &LossConfig::default(),
            "utt2",
        )
        .unwrap();
        assert!(samples.is_empty());
    }

    #[test]
    fn slice_count_matches_enumeration_oracle() {
        let mut rng = SeedStream::new(31);
        let mut total = 0usize;
        let mut expected = 0usize;
        for i in 0..20 {
            let frames = 40 + rng.below(200);
            let l = active_lps(frames);
            let got = slice_samples(
                &l,
                &l,
                &unit_stats(),
                &SliceConfig::default(),
                &LossConfig::default(),
                &format!("utt{i}"),
            )
            .unwrap()
            .len();
            total += got;
            expected += (frames - 40) / 20 + 1; // none rejected: all frames active
        }
        assert_eq!(total, expected);
    }
}
