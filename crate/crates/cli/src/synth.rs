//! Self-contained synthetic corpus: harmonic "speech" with formant-like
//! band envelopes, syllable rhythm and genuine pauses, plus three colored
//! interferers. Everything derives from one seed, so a corpus is
//! reproducible bit for bit.

use std::path::Path;

use anyhow::{Context, Result};
use gse_core::dsp::{Waveform, SAMPLE_RATE};
use gse_core::math;
use gse_core::rng::SeedStream;

use crate::manifest::fnv1a64;
use crate::wav::write_wav;

pub struct SynthConfig {
    pub speakers: usize,
    pub test_speakers: usize,
    pub utterances_per_speaker: usize,
    pub utterance_secs: f64,
    pub noise_secs: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            speakers: 10,
            test_speakers: 2,
            utterances_per_speaker: 5,
            utterance_secs: 6.0,
            noise_secs: 30.0,
            seed: 1,
        }
    }
}

/// One utterance: syllables of a few hundred milliseconds separated by
/// short gaps. Within a syllable, harmonics of a wandering fundamental are
/// shaped by two formant resonances; edges are faded to avoid clicks.
pub fn synth_utterance(f0_base: f64, secs: f64, stream: &mut SeedStream) -> Waveform {
    let n = (secs * SAMPLE_RATE as f64) as usize;
    let mut samples = vec![0.0f64; n];
    let mut t = 0usize;
    while t < n {
        // gap before each syllable
        let gap = (stream.uniform(0.03, 0.12) * SAMPLE_RATE as f64) as usize;
        t += gap;
        if t >= n {
            break;
        }
        let syl_len = (stream.uniform(0.12, 0.30) * SAMPLE_RATE as f64) as usize;
        let end = (t + syl_len).min(n);
        let f0 = f0_base * stream.uniform(0.85, 1.18);
        let amp = stream.uniform(0.15, 0.35);
        let formant1 = stream.uniform(300.0, 900.0);
        let formant2 = stream.uniform(1100.0, 2600.0);
        let bw1 = stream.uniform(80.0, 160.0);
        let bw2 = stream.uniform(150.0, 350.0);
        let vibrato_phase = stream.uniform(0.0, 2.0 * math::PI);

        let n_harm = (4000.0 / f0).floor() as usize;
        let mut weights = Vec::with_capacity(n_harm);
        let mut phases = Vec::with_capacity(n_harm);
        for h in 1..=n_harm {
            let f = f0 * h as f64;
            let g1 = math::exp(-((f - formant1) * (f - formant1)) / (2.0 * bw1 * bw1));
            let g2 = 0.7 * math::exp(-((f - formant2) * (f - formant2)) / (2.0 * bw2 * bw2));
            weights.push((g1 + g2 + 0.05) / h as f64);
            phases.push(stream.uniform(0.0, 2.0 * math::PI));
        }
        let wsum: f64 = weights.iter().sum();

        let fade = (0.02 * SAMPLE_RATE as f64) as usize;
        for (k, slot) in samples[t..end].iter_mut().enumerate() {
            let time = k as f64 / SAMPLE_RATE as f64;
            let f_inst = f0 * (1.0 + 0.02 * math::sin(2.0 * math::PI * 5.0 * time + vibrato_phase));
            let mut acc = 0.0;
            for (h, (&w, &ph)) in weights.iter().zip(&phases).enumerate() {
                acc += w * math::sin(2.0 * math::PI * f_inst * (h + 1) as f64 * time + ph);
            }
            let len = end - t;
            let env = if k < fade {
                k as f64 / fade as f64
            } else if k + fade > len {
                (len - k) as f64 / fade as f64
            } else {
                1.0
            };
            *slot = amp * env * acc / wsum;
        }
        t = end;
    }
    Waveform::new(samples)
}

/// Low-weighted colored noise: white noise through a one-pole lowpass.
fn rumble(n: usize, stream: &mut SeedStream) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let mut y = 0.0;
    for slot in out.iter_mut() {
        let x = stream.uniform(-1.0, 1.0);
        y = 0.985 * y + 0.015 * x;
        *slot = y;
    }
    normalize_rms(&mut out, 0.15);
    out
}

/// Many detuned harmonic voices with slow amplitude modulation: energy in
/// the speech bands, babble-like.
fn babble(n: usize, stream: &mut SeedStream) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for _ in 0..8 {
        let f0 = stream.uniform(100.0, 260.0);
        let am_rate = stream.uniform(1.5, 5.0);
        let am_phase = stream.uniform(0.0, 2.0 * math::PI);
        let phase = stream.uniform(0.0, 2.0 * math::PI);
        for (i, slot) in out.iter_mut().enumerate() {
            let time = i as f64 / SAMPLE_RATE as f64;
            let am = 0.5 + 0.5 * math::sin(2.0 * math::PI * am_rate * time + am_phase);
            let mut acc = 0.0;
            for h in 1..=5 {
                acc += math::sin(2.0 * math::PI * f0 * h as f64 * time + phase * h as f64) / h as f64;
            }
            *slot += am * acc;
        }
    }
    normalize_rms(&mut out, 0.15);
    out
}

/// High-band hiss: white noise minus its lowpass, leaving the top octaves.
fn hiss(n: usize, stream: &mut SeedStream) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let mut y = 0.0;
    for slot in out.iter_mut() {
        let x = stream.uniform(-1.0, 1.0);
        y = 0.6 * y + 0.4 * x;
        *slot = x - y;
    }
    normalize_rms(&mut out, 0.15);
    out
}

fn normalize_rms(xs: &mut [f64], target: f64) {
    let rms = math::sqrt(xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64);
    if rms > 0.0 {
        let g = target / rms;
        for x in xs.iter_mut() {
            *x *= g;
        }
    }
}

/// Generates `out/speech/{train,test}/<speaker>/<utt>.wav` and
/// `out/noise/{rumble,babble,hiss}.wav`.
pub fn generate(out_dir: &Path, cfg: &SynthConfig) -> Result<()> {
    let n_noise = (cfg.noise_secs * SAMPLE_RATE as f64) as usize;
    let noise_dir = out_dir.join("noise");
    std::fs::create_dir_all(&noise_dir).context("creating noise dir")?;
    for (name, gen) in [
        ("rumble", rumble as fn(usize, &mut SeedStream) -> Vec<f64>),
        ("babble", babble),
        ("hiss", hiss),
    ] {
        let mut stream = SeedStream::derived(cfg.seed, &[fnv1a64(b"noise"), fnv1a64(name.as_bytes())]);
        let samples = gen(n_noise, &mut stream);
        write_wav(&noise_dir.join(format!("{name}.wav")), &Waveform::new(samples))?;
    }

    for sp in 0..cfg.speakers {
        let split = if sp < cfg.speakers - cfg.test_speakers {
            "train"
        } else {
            "test"
        };
        let sp_dir = out_dir.join("speech").join(split).join(format!("sp{sp:02}"));
        std::fs::create_dir_all(&sp_dir).context("creating speaker dir")?;
        let mut sp_stream = SeedStream::derived(cfg.seed, &[fnv1a64(b"speaker"), sp as u64]);
        let f0_base = sp_stream.uniform(95.0, 240.0);
        for utt in 0..cfg.utterances_per_speaker {
            let mut stream = SeedStream::derived(cfg.seed, &[fnv1a64(b"utt"), sp as u64, utt as u64]);
            let w = synth_utterance(f0_base, cfg.utterance_secs, &mut stream);
            write_wav(&sp_dir.join(format!("utt{utt:02}.wav")), &w)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utterances_have_speech_and_pauses() {
        let mut s = SeedStream::new(3);
        let w = synth_utterance(140.0, 2.0, &mut s);
        assert_eq!(w.len(), 32000);
        assert!(w.peak() > 0.05 && w.peak() <= 1.0);
        // frame-level energy must alternate: some loud frames, some silent
        let spec = gse_core::dsp::stft(&w).unwrap();
        let energies: Vec<f64> = (0..spec.frames).map(|m| spec.frame_energy(m)).collect();
        let max = energies.iter().cloned().fold(0.0f64, f64::max);
        let quiet = energies.iter().filter(|&&e| e < max * 1e-4).count();
        let loud = energies.iter().filter(|&&e| e > max * 0.01).count();
        assert!(quiet > 0, "no pauses in synthetic speech");
        assert!(loud > spec.frames / 4, "not enough voiced frames");
    }

    #[test]
    fn noise_generators_fill_spectrum_bands() {
        let mut s = SeedStream::new(4);
        let n = 16000;
        for (name, gen) in [
            ("rumble", rumble as fn(usize, &mut SeedStream) -> Vec<f64>),
            ("babble", babble),
            ("hiss", hiss),
        ] {
            let xs = gen(n, &mut s);
            let rms = math::sqrt(xs.iter().map(|x| x * x).sum::<f64>() / n as f64);
            assert!((rms - 0.15).abs() < 1e-9, "{name}: rms {rms}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            speakers: 2,
            test_speakers: 1,
            utterances_per_speaker: 1,
            utterance_secs: 1.0,
            noise_secs: 2.0,
            seed: 11,
        };
        generate(a.path(), &cfg).unwrap();
        generate(b.path(), &cfg).unwrap();
        let fa = std::fs::read(a.path().join("speech/train/sp00/utt00.wav")).unwrap();
        let fb = std::fs::read(b.path().join("speech/train/sp00/utt00.wav")).unwrap();
        assert_eq!(fa, fb);
        assert!(a.path().join("speech/test/sp01/utt00.wav").exists());
        assert!(a.path().join("noise/babble.wav").exists());
    }
}
